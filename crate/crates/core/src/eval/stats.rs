use serde::{Deserialize, Serialize};

/// Percentile `q` in `[0, 100]` with linear interpolation between order
/// statistics. Sorts `values` in place; `None` when empty.
pub fn percentile(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(values[lo] + (values[hi] - values[lo]) * frac)
}

/// Table-style summary of one metric over subjects. Missing values are
/// counted, not averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
    pub count: usize,
    pub missing: usize,
}

impl Summary {
    pub fn of(values: &[Option<f64>]) -> Self {
        let mut present: Vec<f64> = values.iter().flatten().copied().collect();
        let missing = values.len() - present.len();
        let count = present.len();
        if count == 0 {
            return Summary {
                mean: None,
                std: None,
                median: None,
                q25: None,
                q75: None,
                count,
                missing,
            };
        }
        let mean = present.iter().sum::<f64>() / count as f64;
        let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        Summary {
            mean: Some(mean),
            std: Some(var.sqrt()),
            median: percentile(&mut present, 50.0),
            q25: percentile(&mut present, 25.0),
            q75: percentile(&mut present, 75.0),
            count,
            missing,
        }
    }
}
