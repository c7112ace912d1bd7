use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Volume;
use crate::error::{Error, Result};

use super::metrics::{dice, hd95, region_masks, Region};
use super::stats::Summary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject: String,
    pub region: Region,
    pub dice: f64,
    /// `None` when the prediction or the reference region is empty.
    pub hd95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub dice: Summary,
    pub hd95: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subjects: Vec<SubjectMetrics>,
    pub aggregate: BTreeMap<Region, RegionSummary>,
}

/// Dice and HD95 per subject and region, summarised per region. Subjects
/// are paired by id; both lists must hold the same ids.
pub fn evaluate(preds: &[Volume], truths: &[Volume]) -> Result<MetricsReport> {
    let mut by_id: BTreeMap<&str, &Volume> = truths.iter().map(|t| (t.subject.as_str(), t)).collect();
    if by_id.len() != truths.len() || preds.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} reference volumes (ids must be unique)",
            preds.len(),
            truths.len()
        )));
    }
    let mut subjects = Vec::with_capacity(preds.len() * 3);
    for p in preds {
        let t = by_id
            .remove(p.subject.as_str())
            .ok_or_else(|| Error::invalid(format!("no reference volume for subject {}", p.subject)))?;
        if p.dims != t.dims {
            return Err(Error::shape("evaluate", &p.dims, &t.dims));
        }
        let pm = region_masks(p.labels()?, p.dims, p.spacing)?;
        let tm = region_masks(t.labels()?, t.dims, t.spacing)?;
        for (a, b) in pm.iter().zip(&tm) {
            subjects.push(SubjectMetrics {
                subject: p.subject.clone(),
                region: a.region,
                dice: dice(&a.voxels, &b.voxels)?,
                hd95: hd95(&a.voxels, &b.voxels, t.dims, t.spacing)?,
            });
        }
    }
    let aggregate = Region::ALL
        .iter()
        .map(|&r| {
            let rows: Vec<&SubjectMetrics> = subjects.iter().filter(|s| s.region == r).collect();
            let d: Vec<Option<f64>> = rows.iter().map(|s| Some(s.dice)).collect();
            let h: Vec<Option<f64>> = rows.iter().map(|s| s.hd95).collect();
            (
                r,
                RegionSummary {
                    dice: Summary::of(&d),
                    hd95: Summary::of(&h),
                },
            )
        })
        .collect();
    Ok(MetricsReport { subjects, aggregate })
}

impl MetricsReport {
    pub fn mean_dice(&self, region: Region) -> Option<f64> {
        self.aggregate.get(&region).and_then(|s| s.dice.mean)
    }

    /// Columns `subject,region,dice,hd95`; a missing HD95 is an empty cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subject", "region", "dice", "hd95"])?;
        for s in &self.subjects {
            w.write_record([
                s.subject.clone(),
                s.region.name().to_string(),
                s.dice.to_string(),
                s.hd95.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("metrics.csv"))?)?;
        std::fs::write(dir.join("metrics.json"), self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(id: &str, labels: Vec<u8>) -> Volume {
        Volume::from_labels(id, [1, 2, 4], [1.0; 3], labels).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let t = vec![vol("a", vec![0, 1, 2, 3, 3, 2, 0, 0]), vol("b", vec![2, 2, 3, 0, 1, 0, 0, 0])];
        let r = evaluate(&t, &t).unwrap();
        assert!(r.subjects.iter().all(|s| s.dice == 1.0 && s.hd95 == Some(0.0)));
        assert_eq!(r.mean_dice(Region::WT), Some(1.0));
    }

    #[test]
    fn subject_mismatch() {
        let a = vec![vol("a", vec![0; 8])];
        let b = vec![vol("b", vec![0; 8])];
        assert!(evaluate(&a, &b).is_err());
        assert!(evaluate(&a, &[]).is_err());
    }

    #[test]
    fn csv_marks_missing_distance() {
        let p = vec![vol("a", vec![0; 8])];
        let t = vec![vol("a", vec![2, 0, 0, 0, 0, 0, 0, 0])];
        let r = evaluate(&p, &t).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("subject,region,dice,hd95\na,WT,0,\n"));
        // TC and ET are empty in both: dice 1, distance missing
        assert!(text.contains("a,TC,1,\n"));
        assert!(r.to_json().unwrap().contains("\"missing\": 1"));
    }
}
