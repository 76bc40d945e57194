use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::agreement::{mean, sample_sd};
use crate::error::{Error, Result};
use crate::frame::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    pub rmse: f64,
    /// Sample SD of the distances over `sqrt(n)`.
    pub sem: f64,
    pub mae: f64,
}

/// Statistics of already-scaled distances.
pub fn error_stats_from_distances(distances: &[f64]) -> Result<ErrorStats> {
    if distances.is_empty() {
        return Err(Error::InvalidInput("error statistics of an empty set".into()));
    }
    let n = distances.len() as f64;
    Ok(ErrorStats {
        n: distances.len(),
        rmse: (distances.iter().map(|d| d * d).sum::<f64>() / n).sqrt(),
        sem: sample_sd(distances) / n.sqrt(),
        mae: mean(distances),
    })
}

/// RMSE, SEM and MAE in millimetres of the Euclidean distances between
/// aligned model and reference positions given in pixels.
pub fn error_stats(model: &[Point], reference: &[Point], spacing_mm: f64) -> Result<ErrorStats> {
    if model.len() != reference.len() {
        return Err(Error::dims(
            format!("{} reference points", reference.len()),
            model.len(),
        ));
    }
    if !(spacing_mm > 0.0 && spacing_mm.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "pixel spacing must be positive, got {spacing_mm}"
        )));
    }
    let d: Vec<f64> = model
        .iter()
        .zip(reference)
        .map(|(m, r)| m.distance(r) * spacing_mm)
        .collect();
    error_stats_from_distances(&d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `(mean of the pair / image extent, model - reference)` per pair.
    pub pairs: Vec<(f64, f64)>,
}

/// Differences `model - reference` along one axis: bias, bias +- 1.96 SD,
/// and the normalized mean abscissa of each pair.
pub fn bland_altman(model: &[f64], reference: &[f64], image_extent: f64) -> Result<BlandAltman> {
    if model.is_empty() {
        return Err(Error::InvalidInput("Bland-Altman analysis of an empty set".into()));
    }
    if model.len() != reference.len() {
        return Err(Error::dims(
            format!("{} reference values", reference.len()),
            model.len(),
        ));
    }
    if !(image_extent > 0.0) {
        return Err(Error::InvalidInput(format!(
            "image extent must be positive, got {image_extent}"
        )));
    }
    let diffs: Vec<f64> = model.iter().zip(reference).map(|(m, r)| m - r).collect();
    let bias = mean(&diffs);
    let sd = sample_sd(&diffs);
    Ok(BlandAltman {
        bias,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
        pairs: model
            .iter()
            .zip(reference)
            .zip(&diffs)
            .map(|((m, r), d)| ((m + r) / 2.0 / image_extent, *d))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePoint {
    pub n_star: f64,
    /// Percentage of frames with model distance `<= n_star * sigma_bar`.
    pub model_pct: f64,
    /// Same percentage averaged over specialists.
    pub specialist_pct: f64,
}

/// Default tolerance grid: 0 to 10 in steps of 0.25.
pub fn default_tolerance_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64 * 0.25).collect()
}

fn pct_within(distances: &[f64], limit: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    100.0 * distances.iter().filter(|&&d| d <= limit).count() as f64 / distances.len() as f64
}

/// Share of frames within `n* sigma_bar` of the reference for the model and
/// for each specialist (averaged over specialists), at every grid value.
pub fn tolerance_curve(
    model_distances: &[f64],
    specialist_distances: &[Vec<f64>],
    sigma_bar: f64,
    n_grid: &[f64],
) -> Result<Vec<TolerancePoint>> {
    if !(sigma_bar >= 0.0 && sigma_bar.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sigma_bar must be non-negative, got {sigma_bar}"
        )));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    Ok(grid
        .into_iter()
        .map(|n_star| {
            let limit = n_star * sigma_bar;
            let specialist_pct = if specialist_distances.is_empty() {
                0.0
            } else {
                specialist_distances.iter().map(|d| pct_within(d, limit)).sum::<f64>()
                    / specialist_distances.len() as f64
            };
            TolerancePoint {
                n_star,
                model_pct: pct_within(model_distances, limit),
                specialist_pct,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Muscle,
    Movement,
    Instrument,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Muscle, Grouping::Movement, Grouping::Instrument];

    pub fn as_str(&self) -> &'static str {
        match self {
            Grouping::Muscle => "muscle",
            Grouping::Movement => "movement",
            Grouping::Instrument => "instrument",
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grouping::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown grouping key `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub grouping: Grouping,
    pub groups: BTreeMap<String, ErrorStats>,
    /// Known group values without any frame.
    pub empty_groups: Vec<String>,
}

/// Error statistics per group from `(group, distance in mm)` pairs.
/// `known_groups` lists every group value the dataset could contain;
/// those without frames are reported as empty.
pub fn breakdown(grouping: Grouping, entries: &[(String, f64)], known_groups: &[String]) -> Result<Breakdown> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (g, d) in entries {
        by.entry(g.clone()).or_default().push(*d);
    }
    let groups = by
        .iter()
        .map(|(g, d)| Ok((g.clone(), error_stats_from_distances(d)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let mut empty_groups: Vec<String> = known_groups.iter().filter(|g| !by.contains_key(*g)).cloned().collect();
    empty_groups.sort();
    empty_groups.dedup();
    Ok(Breakdown {
        grouping,
        groups,
        empty_groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_stats_examples() {
        let p = vec![Point::new(1.0, 2.0), Point::new(5.0, 5.0)];
        let s = error_stats(&p, &p, 0.2).unwrap();
        assert_eq!((s.rmse, s.sem, s.mae), (0.0, 0.0, 0.0));

        let s = error_stats_from_distances(&[3.0, 4.0]).unwrap();
        assert!((s.rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((s.rmse - 3.53553).abs() < 1e-5);
        assert_eq!(s.mae, 3.5);
        assert!((s.sem - 0.5).abs() < 1e-12);
        assert!(error_stats_from_distances(&[]).is_err());
        let m = vec![Point::new(3.0, 0.0), Point::new(0.0, 4.0)];
        let r = vec![Point::new(0.0, 0.0); 2];
        assert!((error_stats(&m, &r, 1.0).unwrap().rmse - 3.53553).abs() < 1e-5);
    }

    #[test]
    fn bland_altman_examples() {
        let a = [1.0, 2.0, 3.0];
        let ba = bland_altman(&a, &a, 10.0).unwrap();
        assert_eq!((ba.bias, ba.loa_low, ba.loa_high), (0.0, 0.0, 0.0));
        assert!((ba.pairs[1].0 - 0.2).abs() < 1e-15);

        let ba = bland_altman(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
        assert_eq!(ba.bias, 0.0);
        assert!((ba.loa_high - 1.96 * 2f64.sqrt()).abs() < 1e-12);
        assert!((ba.loa_low + 1.96 * 2f64.sqrt()).abs() < 1e-12);
        assert!(bland_altman(&[], &[], 1.0).is_err());
    }

    #[test]
    fn tolerance_examples() {
        let c = tolerance_curve(&[1.0, 2.0, 3.0], &[], 1.0, &[2.0]).unwrap();
        assert!((c[0].model_pct - 200.0 / 3.0).abs() < 1e-9);
        assert!((c[0].model_pct - 66.67).abs() < 0.005);

        let zeros = vec![0.0; 5];
        let c = tolerance_curve(&zeros, std::slice::from_ref(&zeros), 0.7, &default_tolerance_grid()).unwrap();
        assert!(c
            .iter()
            .filter(|p| p.n_star > 0.0)
            .all(|p| p.model_pct == 100.0 && p.specialist_pct == 100.0));

        let c = tolerance_curve(&[0.5, 3.0, 1.0], &[vec![2.0, 0.1, 9.0]], 1.0, &[3.0, 0.0, 1.0, 10.0]).unwrap();
        assert!(c.windows(2).all(|w| w[0].n_star <= w[1].n_star
            && w[0].model_pct <= w[1].model_pct
            && w[0].specialist_pct <= w[1].specialist_pct));
    }

    #[test]
    fn breakdown_groups() {
        let entries = vec![
            ("MG".to_string(), 3.0),
            ("MG".to_string(), 4.0),
            ("LG".to_string(), 1.0),
        ];
        let known = vec!["MG".to_string(), "LG".to_string(), "XX".to_string()];
        let b = breakdown(Grouping::Muscle, &entries, &known).unwrap();
        assert_eq!(b.groups["MG"].n, 2);
        assert_eq!(b.groups["LG"].mae, 1.0);
        assert_eq!(b.empty_groups, vec!["XX"]);

        let single = vec![("A".to_string(), 3.0), ("A".to_string(), 4.0)];
        let b = breakdown(Grouping::Instrument, &single, &[]).unwrap();
        assert_eq!(b.groups["A"], error_stats_from_distances(&[3.0, 4.0]).unwrap());
        assert!("colour".parse::<Grouping>().is_err());
    }
}
