use crate::error::{Error, Result};

/// Multi-channel 3D image (`C x D x H x W`, axial slices along `D`) with an
/// optional `D x H x W` label map.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub subject: String,
    pub channels: usize,
    /// `[D, H, W]`
    pub dims: [usize; 3],
    /// Millimetres per voxel along `[D, H, W]`.
    pub spacing: [f64; 3],
    pub data: Vec<f32>,
    pub labels: Option<Vec<u8>>,
}

impl Volume {
    pub fn new(
        subject: impl Into<String>,
        channels: usize,
        dims: [usize; 3],
        spacing: [f64; 3],
        data: Vec<f32>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let vol = Volume {
            subject: subject.into(),
            channels,
            dims,
            spacing,
            data,
            labels,
        };
        vol.validate()?;
        Ok(vol)
    }

    /// Label-only volume, as written for predictions.
    pub fn from_labels(subject: impl Into<String>, dims: [usize; 3], spacing: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        Self::new(subject, 0, dims, spacing, Vec::new(), Some(labels))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.voxels_checked()?;
        if self.dims.contains(&0) {
            return Err(Error::InvalidShape(format!("empty volume extents {:?}", self.dims)));
        }
        let want = n
            .checked_mul(self.channels)
            .ok_or_else(|| Error::InvalidShape("extent overflow".into()))?;
        if self.data.len() != want {
            return Err(Error::InvalidShape(format!(
                "{} channels of {:?} need {want} values, got {}",
                self.channels,
                self.dims,
                self.data.len()
            )));
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::InvalidShape(format!(
                    "label map has {} voxels, volume {n}",
                    l.len()
                )));
            }
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidShape(format!("bad spacing {:?}", self.spacing)));
        }
        Ok(())
    }

    fn voxels_checked(&self) -> Result<usize> {
        self.dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape(format!("extent overflow in {:?}", self.dims)))
    }

    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn labels(&self) -> Result<&[u8]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("volume {} has no labels", self.subject)))
    }

    /// Brain region: voxels where any channel is nonzero.
    pub fn brain_mask(&self) -> Vec<bool> {
        let n = self.voxels();
        let mut mask = vec![false; n];
        for c in 0..self.channels {
            for (m, &v) in mask.iter_mut().zip(&self.data[c * n..(c + 1) * n]) {
                *m |= v != 0.0;
            }
        }
        mask
    }
}
