//! One Deep Layer Aggregation stage: hierarchical aggregation trees at each
//! scale (HDA) fused coarse-to-fine by iterative aggregation (IDA).

use serde::{Deserialize, Serialize};

use crate::autograd::{concat_channels, Tensor};
use crate::error::{Error, Result};
use crate::nn::{conv2d, spatial_dropout, transpose_conv2d, Conv2DParams, ConvBlock, Downsampler, DownsamplerKind};
use crate::real::Real;
use crate::Rng;

use super::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlaStageConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub num_scales: usize,
    pub hda_depth: usize,
    pub num_classes: usize,
    pub downsampler: DownsamplerKind,
}

impl DlaStageConfig {
    pub fn new(in_channels: usize) -> Self {
        DlaStageConfig {
            in_channels,
            base_width: 8,
            num_scales: 3,
            hda_depth: 2,
            num_classes: 4,
            downsampler: DownsamplerKind::Gconv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_scales < 2 {
            return Err(Error::Config(format!("num_scales {} < 2", self.num_scales)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes {} < 2", self.num_classes)));
        }
        if self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        if self.hda_depth == 0 {
            return Err(Error::Config("hda_depth must be at least 1".into()));
        }
        Ok(())
    }

    /// Channel width at scale `i`: the base width at full resolution, twice
    /// that at every coarser scale.
    pub fn width(&self, scale: usize) -> usize {
        self.base_width << scale.min(1)
    }

    /// Channels of the feature map handed to the next cascade stage.
    pub fn feature_width(&self) -> usize {
        self.width(0)
    }

    /// Spatial extents must be divisible by this.
    pub fn extent_multiple(&self) -> usize {
        1 << (self.num_scales - 1)
    }
}

/// Aggregation node: concatenate, then conv 3x3, norm, ReLU.
#[derive(Debug, Clone)]
pub struct Aggregation<T: Real = f32> {
    pub block: ConvBlock<T>,
}

impl<T: Real> Aggregation<T> {
    pub fn new(in_widths: usize, out_width: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Aggregation {
            block: ConvBlock::new(in_widths, out_width, rng)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.block.out_channels()
    }

    pub fn forward(&self, features: &[Tensor<T>]) -> Result<Tensor<T>> {
        aggregate(features, self)
    }
}

/// Fuses equally sized feature maps through one aggregation node.
pub fn aggregate<T: Real>(features: &[Tensor<T>], node: &Aggregation<T>) -> Result<Tensor<T>> {
    let fused = if features.len() == 1 {
        features[0].clone()
    } else {
        concat_channels(features)?
    };
    node.block.forward(&fused)
}

#[derive(Debug, Clone)]
enum HdaNode<T: Real> {
    Leaf {
        first: ConvBlock<T>,
        second: ConvBlock<T>,
        agg: Aggregation<T>,
    },
    Branch {
        left: Box<HdaNode<T>>,
        right: Box<HdaNode<T>>,
        agg: Aggregation<T>,
    },
}

impl<T: Real> HdaNode<T> {
    fn new(depth: usize, in_width: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        // every aggregation node also sees the subtree's input
        let agg_in = 2 * width + in_width;
        if depth == 1 {
            let first = ConvBlock::new(in_width, width, rng)?;
            let second = ConvBlock::new(width, width, rng)?;
            let agg = Aggregation::new(agg_in, width, rng)?;
            Ok(HdaNode::Leaf { first, second, agg })
        } else {
            let left = Box::new(HdaNode::new(depth - 1, in_width, width, rng)?);
            let right = Box::new(HdaNode::new(depth - 1, width, width, rng)?);
            let agg = Aggregation::new(agg_in, width, rng)?;
            Ok(HdaNode::Branch { left, right, agg })
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            HdaNode::Leaf { first, second, agg } => {
                let a = first.forward(x)?;
                let b = second.forward(&a)?;
                agg.forward(&[a, b, x.clone()])
            }
            HdaNode::Branch { left, right, agg } => {
                let a = left.forward(x)?;
                let b = right.forward(&a)?;
                agg.forward(&[a, b, x.clone()])
            }
        }
    }

    fn counts(&self) -> (usize, usize) {
        match self {
            HdaNode::Leaf { .. } => (2, 1),
            HdaNode::Branch { left, right, .. } => {
                let (lb, la) = left.counts();
                let (rb, ra) = right.counts();
                (lb + rb, la + ra + 1)
            }
        }
    }

    fn named_parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        match self {
            HdaNode::Leaf { first, second, agg } => {
                first.named_parameters(&format!("{prefix}.block0"), out);
                second.named_parameters(&format!("{prefix}.block1"), out);
                agg.block.named_parameters(&format!("{prefix}.agg"), out);
            }
            HdaNode::Branch { left, right, agg } => {
                left.named_parameters(&format!("{prefix}.left"), out);
                right.named_parameters(&format!("{prefix}.right"), out);
                agg.block.named_parameters(&format!("{prefix}.agg"), out);
            }
        }
    }
}

/// Binary aggregation tree of `2^depth` basic blocks.
#[derive(Debug, Clone)]
pub struct HdaTree<T: Real = f32> {
    root: HdaNode<T>,
    out_width: usize,
}

impl<T: Real> HdaTree<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.root.forward(x)
    }

    pub fn block_count(&self) -> usize {
        self.root.counts().0
    }

    pub fn aggregation_count(&self) -> usize {
        self.root.counts().1
    }

    pub fn out_channels(&self) -> usize {
        self.out_width
    }

    pub fn named_parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.root.named_parameters(prefix, out);
    }
}

pub fn build_hda<T: Real>(depth: usize, in_width: usize, width: usize, rng: &mut Rng) -> Result<HdaTree<T>> {
    if depth == 0 {
        return Err(Error::invalid("hda depth must be at least 1"));
    }
    Ok(HdaTree {
        root: HdaNode::new(depth, in_width, width, rng)?,
        out_width: width,
    })
}

/// Coarse-to-fine fusion chain: upsample the running map (transpose conv,
/// k 3, stride 2) and aggregate it with the next finer scale.
#[derive(Debug, Clone)]
pub struct Ida<T: Real = f32> {
    ups: Vec<Conv2DParams<T>>,
    aggs: Vec<Aggregation<T>>,
}

impl<T: Real> Ida<T> {
    /// `widths[i]` is the channel count at scale `i`, finest first.
    pub fn new(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut ups = Vec::new();
        let mut aggs = Vec::new();
        for i in 0..widths.len().saturating_sub(1) {
            ups.push(Conv2DParams::init_upsample(widths[i + 1], widths[i], rng)?);
            aggs.push(Aggregation::new(2 * widths[i], widths[i], rng)?);
        }
        Ok(Ida { ups, aggs })
    }

    pub fn forward(&self, scales: &[Tensor<T>]) -> Result<Tensor<T>> {
        build_ida(scales, self)
    }

    pub fn named_parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, up) in self.ups.iter().enumerate() {
            out.push((format!("{prefix}.up{i}.weight"), up.weight.clone()));
            if let Some(b) = &up.bias {
                out.push((format!("{prefix}.up{i}.bias"), b.clone()));
            }
        }
        for (i, agg) in self.aggs.iter().enumerate() {
            agg.block.named_parameters(&format!("{prefix}.agg{i}"), out);
        }
    }
}

/// Runs the IDA chain over `scales` (finest first, each exactly half the
/// extent of the previous) and returns a map at the finest resolution.
pub fn build_ida<T: Real>(scales: &[Tensor<T>], ida: &Ida<T>) -> Result<Tensor<T>> {
    let (last, rest) = scales
        .split_last()
        .ok_or_else(|| Error::invalid("ida over an empty scale list"))?;
    for pair in scales.windows(2) {
        let (fine, coarse) = (pair[0].shape(), pair[1].shape());
        if fine.len() != 4 || coarse.len() != 4 || fine[2] != 2 * coarse[2] || fine[3] != 2 * coarse[3] {
            return Err(Error::InvalidShape(format!(
                "ida scales must halve at each step, got {fine:?} then {coarse:?}"
            )));
        }
    }
    if rest.len() > ida.ups.len() {
        return Err(Error::invalid(format!(
            "ida built for {} scales, given {}",
            ida.ups.len() + 1,
            scales.len()
        )));
    }
    let mut cur = last.clone();
    for (i, fine) in rest.iter().enumerate().rev() {
        let up = transpose_conv2d(&cur, &ida.ups[i])?;
        cur = ida.aggs[i].forward(&[fine.clone(), up])?;
    }
    Ok(cur)
}

/// Output of one DLA stage.
#[derive(Debug, Clone)]
pub struct StageOutput<T: Real = f32> {
    pub logits: Tensor<T>,
    /// Feature map feeding the classifier head.
    pub features: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DlaStage<T: Real = f32> {
    config: DlaStageConfig,
    stem: ConvBlock<T>,
    trees: Vec<HdaTree<T>>,
    down: Downsampler<T>,
    ida: Ida<T>,
    head: Conv2DParams<T>,
}

impl<T: Real> DlaStage<T> {
    pub fn new(config: DlaStageConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let widths: Vec<usize> = (0..config.num_scales).map(|i| config.width(i)).collect();
        let stem = ConvBlock::new(config.in_channels, widths[0], rng)?;
        let mut trees = Vec::with_capacity(config.num_scales);
        for (i, &w) in widths.iter().enumerate() {
            let in_w = if i == 0 { widths[0] } else { widths[i - 1] };
            trees.push(build_hda(config.hda_depth, in_w, w, rng)?);
        }
        let ida = Ida::new(&widths, rng)?;
        let head = Conv2DParams::init(widths[0], config.num_classes, 1, 1, 0, true, rng)?;
        Ok(DlaStage {
            down: Downsampler::new(config.downsampler),
            config,
            stem,
            trees,
            ida,
            head,
        })
    }

    pub fn config(&self) -> &DlaStageConfig {
        &self.config
    }

    pub fn in_channels(&self) -> usize {
        self.stem.in_channels()
    }

    pub fn downsampler(&self) -> &Downsampler<T> {
        &self.down
    }

    pub fn trees(&self) -> &[HdaTree<T>] {
        &self.trees
    }

    pub fn forward(&self, x: &Tensor<T>, phase: &mut Phase<'_>) -> Result<StageOutput<T>> {
        dla_forward(x, self, phase)
    }

    pub fn named_parameters(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.stem.named_parameters(&format!("{prefix}.stem"), out);
        for (i, tree) in self.trees.iter().enumerate() {
            tree.named_parameters(&format!("{prefix}.hda{i}"), out);
        }
        self.ida.named_parameters(&format!("{prefix}.ida"), out);
        out.push((format!("{prefix}.head.weight"), self.head.weight.clone()));
        if let Some(b) = &self.head.bias {
            out.push((format!("{prefix}.head.bias"), b.clone()));
        }
    }
}

/// Stem, HDA tree per scale with downsampling between scales, IDA back to
/// full resolution, spatial dropout when training, then a 1x1 classifier.
pub fn dla_forward<T: Real>(x: &Tensor<T>, stage: &DlaStage<T>, phase: &mut Phase<'_>) -> Result<StageOutput<T>> {
    let cfg = &stage.config;
    let [_, c, h, w]: [usize; 4] = x
        .shape()
        .try_into()
        .map_err(|_| Error::InvalidShape(format!("stage input must be (N, C, H, W), got {:?}", x.shape())))?;
    if c != stage.in_channels() {
        return Err(Error::shape("dla stage input channels", &[c], &[stage.in_channels()]));
    }
    let m = cfg.extent_multiple();
    if h % m != 0 || w % m != 0 {
        return Err(Error::InvalidShape(format!(
            "extents {h}x{w} not divisible by {m} for {} scales",
            cfg.num_scales
        )));
    }

    let mut scales = Vec::with_capacity(cfg.num_scales);
    let mut cur = stage.stem.forward(x)?;
    for (i, tree) in stage.trees.iter().enumerate() {
        if i > 0 {
            cur = stage.down.forward(&cur)?;
        }
        cur = tree.forward(&cur)?;
        scales.push(cur.clone());
    }
    let fused = stage.ida.forward(&scales)?;
    let features = match phase {
        Phase::Inference => fused,
        Phase::Train { dropout_p, rng } => spatial_dropout(&fused, *dropout_p, true, rng)?,
    };
    let logits = conv2d(&features, &stage.head)?;
    Ok(StageOutput { logits, features })
}
