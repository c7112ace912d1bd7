mod common;

use std::collections::HashMap;

use dla_cascade::data::Volume;
use dla_cascade::infer::{
    connected_components, derive_threshold, ensemble_predict, postprocess, predict_volume, running_mean, tile_origins,
    Connectivity, PostprocConfig, Stitcher,
};
use dla_cascade::model::{CascadeConfig, CascadeNet};
use dla_cascade::nn::DownsamplerKind;
use dla_cascade::Rng;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

fn reach(c: Connectivity) -> usize {
    match c {
        Connectivity::Faces => 1,
        Connectivity::Edges => 2,
        Connectivity::Corners => 3,
    }
}

/// Relabels components by order of first appearance.
fn canonical<I: Copy + Eq + std::hash::Hash + Default>(ids: &[I]) -> Vec<usize> {
    let mut map = HashMap::new();
    ids.iter()
        .map(|&i| {
            if i == I::default() {
                0
            } else {
                let next = map.len() + 1;
                *map.entry(i).or_insert(next)
            }
        })
        .collect()
}

fn random_mask(rng: &mut Rng, n: usize, density: f64) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(density)).collect()
}

#[test]
fn components_match_flood_fill() {
    let mut rng = Rng::seed_from_u64(1);
    let dims = [16, 16, 16];
    for case in 0..100 {
        let mask = random_mask(&mut rng, 4096, [0.1, 0.25, 0.4][case % 3]);
        for conn in Connectivity::ALL {
            let (ids, sizes) = connected_components(&mask, dims, conn).unwrap();
            let want = common::flood_fill(&mask, dims, reach(conn));
            assert_eq!(canonical(&ids), canonical(&want), "case {case}, {conn}");
            let mut a = sizes.clone();
            let mut b = common::component_sizes(&want);
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn postprocess_matches_oracle_filter() {
    let mut rng = Rng::seed_from_u64(2);
    let dims = [8, 10, 12];
    for _ in 0..30 {
        let labels: Vec<u8> = (0..960)
            .map(|_| if rng.random_bool(0.2) { rng.random_range(1..4) } else { 0 })
            .collect();
        let mask: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
        for conn in Connectivity::ALL {
            let min = rng.random_range(1..6);
            let out = postprocess(&labels, dims, &PostprocConfig::new(min, conn).unwrap()).unwrap();
            let keep = common::filter_small(&mask, dims, reach(conn), min);
            for i in 0..960 {
                assert_eq!(out[i], if keep[i] { labels[i] } else { 0 });
            }
        }
    }
}

#[test]
fn connectivity_parses_from_counts() {
    for c in Connectivity::ALL {
        assert_eq!(c.to_string().parse::<Connectivity>().unwrap(), c);
    }
    assert!("4".parse::<Connectivity>().is_err());
    assert!(PostprocConfig::new(0, Connectivity::Faces).is_err());
}

fn tiny_net(seed: u64) -> CascadeNet<f64> {
    let cfg = CascadeConfig {
        mri_channels: 2,
        base_width: 4,
        num_scales: 2,
        hda_depth: 1,
        num_classes: 4,
        downsampler: DownsamplerKind::Gconv,
    };
    CascadeNet::seeded(cfg, seed).unwrap()
}

fn volume(seed: u64) -> Volume {
    let mut rng = Rng::seed_from_u64(seed);
    let dims = [2, 16, 18];
    let n = 2 * 16 * 18;
    let data = (0..2 * n).map(|i| if i % 17 == 0 { 0.0 } else { rng.random_range(0.0..3.0) }).collect();
    Volume::new("v", 2, dims, [1.0; 3], data, None).unwrap()
}

#[test]
fn single_member_ensemble_is_plain_prediction() {
    let (net, vol) = (tiny_net(1), volume(2));
    let plain = predict_volume(&vol, &net, 12).unwrap();
    let ens = ensemble_predict(&vol, std::slice::from_ref(&net), 12).unwrap();
    assert_eq!(plain.data, ens.data);
    assert_eq!(plain.dims, vol.dims);
    for v in 0..plain.voxels() {
        let s: f64 = (0..4).map(|k| plain.class(k)[v]).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn unanimous_members_reproduce_the_member() {
    let (net, vol) = (tiny_net(3), volume(4));
    let plain = predict_volume(&vol, &net, 12).unwrap();
    let ens = ensemble_predict(&vol, &[net.clone(), net.clone(), net], 12).unwrap();
    assert_eq!(plain.argmax(None), ens.argmax(None));
    for (a, b) in plain.data.iter().zip(&ens.data) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn ensemble_mean_lies_between_members() {
    let vol = volume(5);
    let nets = [tiny_net(6), tiny_net(7)];
    let p: Vec<_> = nets.iter().map(|n| predict_volume(&vol, n, 12).unwrap()).collect();
    let ens = ensemble_predict(&vol, &nets, 12).unwrap();
    for i in 0..ens.data.len() {
        let (lo, hi) = (p[0].data[i].min(p[1].data[i]), p[0].data[i].max(p[1].data[i]));
        assert!(ens.data[i] >= lo - 1e-15 && ens.data[i] <= hi + 1e-15);
        assert!((ens.data[i] - (p[0].data[i] + p[1].data[i]) / 2.0).abs() < 1e-12);
    }
    assert!(ensemble_predict::<f64>(&vol, &[], 12).is_err());
}

#[test]
fn argmax_respects_the_mask() {
    let (net, vol) = (tiny_net(8), volume(9));
    let p = predict_volume(&vol, &net, 12).unwrap();
    let brain = vol.brain_mask();
    let labels = p.argmax(Some(&brain));
    for (l, m) in labels.iter().zip(&brain) {
        if !m {
            assert_eq!(*l, 0);
        }
    }
}

#[test]
fn stitching_is_order_independent() {
    let mut rng = Rng::seed_from_u64(10);
    let (k, h, w, e) = (3, 20, 26, 8);
    let mut tiles = Vec::new();
    for &r in &tile_origins(h, e) {
        for &c in &tile_origins(w, e) {
            let t: Vec<f64> = (0..k * e * e).map(|_| rng.random_range(0.0..1.0)).collect();
            tiles.push((r, c, t));
        }
    }
    let run = |tiles: &[(usize, usize, Vec<f64>)]| {
        let mut s = Stitcher::new(k, h, w);
        for (r, c, t) in tiles {
            s.add(*r, *c, e, t);
        }
        s.finish()
    };
    let a = run(&tiles);
    tiles.shuffle(&mut rng);
    let b = run(&tiles);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn tiles_cover_the_axis() {
    for n in 8..40 {
        for e in [4, 8] {
            let o = tile_origins(n, e);
            assert_eq!(o[0], 0);
            assert_eq!(*o.last().unwrap(), n - e);
            assert!(o.windows(2).all(|p| p[1] > p[0] && p[1] - p[0] <= e / 2));
        }
    }
}

#[test]
fn threshold_from_component_sizes() {
    let dims = [1, 1, 20];
    // components of 1, 2, 3 and 4 voxels
    let mut labels = vec![0u8; 20];
    for i in [0, 2, 3, 5, 6, 7, 9, 10, 11, 12] {
        labels[i] = 2;
    }
    let v = Volume::from_labels("a", dims, [1.0; 3], labels).unwrap();
    let t = |q| derive_threshold(std::slice::from_ref(&v), q, Connectivity::Faces).unwrap();
    assert_eq!(t(0.0), 1);
    assert_eq!(t(50.0), 2);
    assert_eq!(t(100.0), 4);
    assert!(derive_threshold(std::slice::from_ref(&v), 101.0, Connectivity::Faces).is_err());
    let empty = Volume::from_labels("b", dims, [1.0; 3], vec![0; 20]).unwrap();
    assert!(derive_threshold(&[empty], 5.0, Connectivity::Faces).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn postprocess_is_idempotent_and_only_removes(
        labels in proptest::collection::vec(prop_oneof![4 => Just(0u8), 1 => 1u8..4], 6 * 6 * 6),
        min in 1usize..10,
        c in 0usize..3,
    ) {
        let cfg = PostprocConfig::new(min, Connectivity::ALL[c]).unwrap();
        let once = postprocess(&labels, [6, 6, 6], &cfg).unwrap();
        let twice = postprocess(&once, [6, 6, 6], &cfg).unwrap();
        prop_assert_eq!(&once, &twice);
        for (o, l) in once.iter().zip(&labels) {
            prop_assert!(*o == 0 || o == l);
        }
    }

    #[test]
    fn running_mean_matches_batch_mean(xs in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 5), 1..8)) {
        let mut mean = xs[0].clone();
        for (i, x) in xs.iter().enumerate().skip(1) {
            running_mean(&mut mean, x, i + 1);
        }
        for j in 0..5 {
            let want = xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64;
            prop_assert!((mean[j] - want).abs() < 1e-12);
        }
    }
}
