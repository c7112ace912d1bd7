use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Volume;
use crate::error::{Error, Result};

/// Voxel neighbourhood: faces (6), faces and edges (18), or the full cube (26).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Faces,
    Edges,
    #[default]
    Corners,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [Connectivity::Faces, Connectivity::Edges, Connectivity::Corners];

    pub fn count(self) -> u8 {
        match self {
            Connectivity::Faces => 6,
            Connectivity::Edges => 18,
            Connectivity::Corners => 26,
        }
    }

    /// Neighbour offsets `(dz, dy, dx)`.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let limit = match self {
            Connectivity::Faces => 1,
            Connectivity::Edges => 2,
            Connectivity::Corners => 3,
        };
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let nz = (dz != 0) as usize + (dy != 0) as usize + (dx != 0) as usize;
                    if nz > 0 && nz <= limit {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Faces),
            18 => Ok(Connectivity::Edges),
            26 => Ok(Connectivity::Corners),
            other => Err(Error::Config(format!("connectivity must be 6, 18 or 26, got {other}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.count()
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("connectivity must be 6, 18 or 26, got {s:?}")))?;
        v.try_into()
    }
}

impl std::fmt::Display for Connectivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.count())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocConfig {
    pub min_cluster_voxels: usize,
    pub connectivity: Connectivity,
}

impl PostprocConfig {
    pub fn new(min_cluster_voxels: usize, connectivity: Connectivity) -> Result<Self> {
        if min_cluster_voxels == 0 {
            return Err(Error::Config("cluster threshold must be at least 1".into()));
        }
        Ok(PostprocConfig {
            min_cluster_voxels,
            connectivity,
        })
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let up = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = up;
            x = up;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Connected components of `mask`. Returns a per-voxel component id
/// (0 = outside the mask, ids from 1 in raster order of first voxel) and the
/// size of each component (`sizes[id - 1]`).
pub fn connected_components(mask: &[bool], dims: [usize; 3], conn: Connectivity) -> Result<(Vec<u32>, Vec<usize>)> {
    let [d, h, w] = dims;
    if mask.len() != d * h * w {
        return Err(Error::shape("connected_components", &dims, &[mask.len()]));
    }
    // only neighbours earlier in raster order
    let back: Vec<[isize; 3]> = conn
        .offsets()
        .into_iter()
        .filter(|&[dz, dy, dx]| (dz, dy, dx) < (0, 0, 0))
        .collect();
    let mut ds = DisjointSet {
        parent: (0..mask.len() as u32).collect(),
    };
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                if !mask[i] {
                    continue;
                }
                for &[dz, dy, dx] in &back {
                    let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if nz < 0 || ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = (nz as usize * h + ny as usize) * w + nx as usize;
                    if mask[j] {
                        ds.union(i as u32, j as u32);
                    }
                }
            }
        }
    }
    let mut ids = vec![0u32; mask.len()];
    let mut root_id = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let r = ds.find(i as u32) as usize;
        if root_id[r] == 0 {
            sizes.push(0);
            root_id[r] = sizes.len() as u32;
        }
        ids[i] = root_id[r];
        sizes[root_id[r] as usize - 1] += 1;
    }
    Ok((ids, sizes))
}

/// Sets every whole-tumor component smaller than the threshold to background.
pub fn postprocess(labels: &[u8], dims: [usize; 3], cfg: &PostprocConfig) -> Result<Vec<u8>> {
    let tumor: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let (ids, sizes) = connected_components(&tumor, dims, cfg.connectivity)?;
    Ok(labels
        .iter()
        .zip(&ids)
        .map(|(&l, &id)| {
            if id != 0 && sizes[id as usize - 1] < cfg.min_cluster_voxels {
                0
            } else {
                l
            }
        })
        .collect())
}

pub fn postprocess_volume(vol: &Volume, cfg: &PostprocConfig) -> Result<Volume> {
    let labels = postprocess(vol.labels()?, vol.dims, cfg)?;
    Volume::new(vol.subject.clone(), vol.channels, vol.dims, vol.spacing, vol.data.clone(), Some(labels))
}

pub const DEFAULT_THRESHOLD_PERCENTILE: f64 = 5.0;

/// Percentile of whole-tumor component sizes over the training labels,
/// floored to an integer and at least 1.
pub fn derive_threshold(volumes: &[Volume], percentile: f64, conn: Connectivity) -> Result<usize> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::invalid(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut sizes = Vec::new();
    for v in volumes {
        let tumor: Vec<bool> = v.labels()?.iter().map(|&l| l != 0).collect();
        sizes.extend(connected_components(&tumor, v.dims, conn)?.1.into_iter().map(|s| s as f64));
    }
    if sizes.is_empty() {
        return Err(Error::invalid("no tumor in the training volumes"));
    }
    let p = crate::eval::percentile(&mut sizes, percentile).expect("nonempty");
    Ok((p.floor() as usize).max(1))
}
