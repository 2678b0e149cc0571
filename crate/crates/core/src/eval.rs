//! Scenario quality metrics: pooled Pearson correlation across sites,
//! per-generator boxplot statistics and mode purity against known synthetic
//! modes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{daylight_band, format_sig9, Mode, ScenarioBatch, WindRegime};
use crate::error::{Error, Result};

/// Symmetric site-by-site correlation matrix. `None` marks a pair involving a
/// constant series, where the coefficient is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub entries: Vec<Option<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.n + j]
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidData(
                "correlation matrix must be square".into(),
            ));
        }
        Ok(Self {
            n,
            entries: rows.iter().flatten().map(|&v| Some(v)).collect(),
        })
    }

    pub fn is_fully_defined(&self) -> bool {
        self.entries.iter().all(Option::is_some)
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson coefficient for every site pair over the concatenation of all
/// samples' series.
pub fn pearson_matrix(batch: &ScenarioBatch) -> Result<CorrelationMatrix> {
    let n = batch.n_sites();
    if n < 2 {
        return Err(Error::InvalidData(
            "correlation needs at least two sites".into(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch("scenarios"));
    }
    let pooled: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..batch.len())
                .flat_map(|i| batch.site(i, s).iter().copied())
                .collect()
        })
        .collect();
    pearson_of_series(&pooled)
}

/// Correlation matrix of already pooled per-site series.
pub fn pearson_of_series(series: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let n = series.len();
    let len = series.first().map_or(0, Vec::len);
    if len < 2 || series.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidData(
            "series must share a length of at least 2".into(),
        ));
    }
    let mut entries = vec![None; n * n];
    for i in 0..n {
        let constant = series[i].iter().all(|&v| v == series[i][0]);
        entries[i * n + i] = if constant { None } else { Some(1.0) };
        for j in (i + 1)..n {
            let r = pearson(&series[i], &series[j]);
            entries[i * n + j] = r;
            entries[j * n + i] = r;
        }
    }
    Ok(CorrelationMatrix { n, entries })
}

/// Frobenius norm of `a - b`.
pub fn correlation_distance(a: &CorrelationMatrix, b: &CorrelationMatrix) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::mismatch("correlation matrix size", a.n, b.n));
    }
    let mut sum = 0.0;
    for (x, y) in a.entries.iter().zip(&b.entries) {
        match (x, y) {
            (Some(x), Some(y)) => sum += (x - y) * (x - y),
            _ => {
                return Err(Error::InvalidData(
                    "distance involves an undefined correlation".into(),
                ))
            }
        }
    }
    Ok(sum.sqrt())
}

/// Quartiles by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Most extreme observations within 1.5 IQR of the box.
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: usize,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() < 4 {
            return Err(Error::InvalidData(format!(
                "boxplot needs at least 4 values, got {}",
                values.len()
            )));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = s
            .iter()
            .copied()
            .filter(|v| (lo..=hi).contains(v))
            .collect();
        Ok(Self {
            q1,
            median,
            q3,
            whisker_lo: inside.first().copied().unwrap_or(q1),
            whisker_hi: inside.last().copied().unwrap_or(q3),
            outliers: s.len() - inside.len(),
        })
    }
}

/// Per-scenario mean and variance plus their boxplot summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorStats {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub mean_box: BoxStats,
    pub variance_box: BoxStats,
}

impl GeneratorStats {
    /// Mean of the per-scenario means.
    pub fn overall_mean(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.means.len() as f64
    }
}

/// Population mean and variance over all entries of each scenario matrix.
pub fn generator_stats(batch: &ScenarioBatch) -> Result<GeneratorStats> {
    if batch.len() < 4 {
        return Err(Error::InvalidData(format!(
            "generator stats need at least 4 scenarios, got {}",
            batch.len()
        )));
    }
    let (means, variances): (Vec<f64>, Vec<f64>) = batch
        .samples()
        .map(|x| {
            let n = x.len() as f64;
            let m = x.iter().sum::<f64>() / n;
            let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            (m, v)
        })
        .unzip();
    Ok(GeneratorStats {
        mean_box: BoxStats::from_values(&means)?,
        variance_box: BoxStats::from_values(&variances)?,
        means,
        variances,
    })
}

/// Threshold on mean night-band output below which a profile is solar.
pub const SOLAR_NIGHT_THRESHOLD: f64 = 0.02;

/// Rule-based classifier for the synthetic families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClassifier {
    /// Night-band mean below [`SOLAR_NIGHT_THRESHOLD`] means solar, else wind.
    WindSolar,
    /// Scenario mean below `threshold` means calm, else gusty.
    CalmGusty { threshold: f64 },
}

impl ModeClassifier {
    /// Calm/gusty split at the midpoint of the two regime levels.
    pub fn calm_gusty() -> Self {
        let calm = WindRegime::Calm.params().level;
        let gusty = WindRegime::Gusty.params().level;
        ModeClassifier::CalmGusty {
            threshold: 0.5 * (calm + gusty),
        }
    }

    /// Classifier matching the modes present in `labels`.
    pub fn for_labels(labels: &[Mode]) -> Result<Self> {
        let has = |m| labels.contains(&m);
        if labels.iter().all(|m| matches!(m, Mode::Wind | Mode::Solar))
            && (has(Mode::Wind) || has(Mode::Solar))
        {
            Ok(ModeClassifier::WindSolar)
        } else if labels.iter().all(|m| matches!(m, Mode::Calm | Mode::Gusty)) && !labels.is_empty()
        {
            Ok(Self::calm_gusty())
        } else {
            Err(Error::InvalidData(
                "no classifier for this label family".into(),
            ))
        }
    }

    pub fn modes(&self) -> [Mode; 2] {
        match self {
            ModeClassifier::WindSolar => [Mode::Wind, Mode::Solar],
            ModeClassifier::CalmGusty { .. } => [Mode::Calm, Mode::Gusty],
        }
    }

    fn check(&self, batch: &ScenarioBatch) -> Result<()> {
        if batch.n_sites() != 1 {
            return Err(Error::InvalidData(format!(
                "mode classifier expects single-site scenarios, got {} sites",
                batch.n_sites()
            )));
        }
        if matches!(self, ModeClassifier::WindSolar) && batch.timesteps() < 8 {
            return Err(Error::InvalidData(
                "wind/solar classifier needs >= 8 timesteps".into(),
            ));
        }
        Ok(())
    }

    pub fn classify(&self, sample: &[f64]) -> Mode {
        match *self {
            ModeClassifier::WindSolar => {
                let (rise, set) = daylight_band(sample.len());
                let night: Vec<f64> = sample[..rise]
                    .iter()
                    .chain(&sample[set..])
                    .copied()
                    .collect();
                let m = night.iter().sum::<f64>() / night.len() as f64;
                if m < SOLAR_NIGHT_THRESHOLD {
                    Mode::Solar
                } else {
                    Mode::Wind
                }
            }
            ModeClassifier::CalmGusty { threshold } => {
                let m = sample.iter().sum::<f64>() / sample.len() as f64;
                if m < threshold {
                    Mode::Calm
                } else {
                    Mode::Gusty
                }
            }
        }
    }

    /// Fraction of samples whose predicted mode matches `labels`.
    pub fn accuracy(&self, batch: &ScenarioBatch, labels: &[Mode]) -> Result<f64> {
        self.check(batch)?;
        if labels.len() != batch.len() {
            return Err(Error::mismatch("labels", batch.len(), labels.len()));
        }
        let hits = batch
            .samples()
            .zip(labels)
            .filter(|(x, &l)| self.classify(x) == l)
            .count();
        Ok(hits as f64 / batch.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePurityReport {
    pub counts: BTreeMap<Mode, usize>,
    pub total: usize,
    pub dominant_mode: Mode,
    pub purity: f64,
}

impl ModePurityReport {
    pub fn fraction(&self, mode: Mode) -> f64 {
        self.counts.get(&mode).copied().unwrap_or(0) as f64 / self.total as f64
    }
}

pub fn mode_purity(batch: &ScenarioBatch, classifier: &ModeClassifier) -> Result<ModePurityReport> {
    classifier.check(batch)?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch("scenarios"));
    }
    let mut counts: BTreeMap<Mode, usize> = classifier.modes().iter().map(|&m| (m, 0)).collect();
    for x in batch.samples() {
        *counts.entry(classifier.classify(x)).or_default() += 1;
    }
    // ties resolve to the first mode in classifier order
    let (dominant_mode, top) = classifier.modes().iter().map(|m| (*m, counts[m])).fold(
        (classifier.modes()[0], 0),
        |best, c| if c.1 > best.1 { c } else { best },
    );
    Ok(ModePurityReport {
        total: batch.len(),
        purity: top as f64 / batch.len() as f64,
        dominant_mode,
        counts,
    })
}

/// Evaluation results for a set of generators, written as JSON plus
/// plot-ready CSV companions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub purity: Option<BTreeMap<String, ModePurityReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<BTreeMap<String, GeneratorStats>>,
    /// Up to a few example profiles per generator (site 0), for plotting.
    #[serde(skip)]
    pub profiles: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationSection {
    /// Matrices keyed by group name (reference groups and generators).
    pub matrices: BTreeMap<String, CorrelationMatrix>,
    /// `(generator, reference, distance)` rows.
    pub distances: Vec<(String, String, f64)>,
}

impl EvalReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidData(format!("report serialization: {e}")))?;
        fs::write(dir.join("eval_report.json"), json + "\n")?;

        let csv_err = |e: csv::Error| Error::InvalidData(e.to_string());
        if !self.profiles.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("Fig3_profiles.csv")).map_err(csv_err)?;
            w.write_record(["generator", "scenario", "t", "value"])
                .map_err(csv_err)?;
            for (g, profiles) in &self.profiles {
                for (i, p) in profiles.iter().enumerate() {
                    for (t, v) in p.iter().enumerate() {
                        w.write_record([g.clone(), i.to_string(), t.to_string(), format_sig9(*v)])
                            .map_err(csv_err)?;
                    }
                }
            }
            w.flush()?;
        }
        if let Some(c) = &self.correlation {
            let mut w = csv::Writer::from_path(dir.join("Fig4_corr.csv")).map_err(csv_err)?;
            w.write_record(["group", "i", "j", "rho"])
                .map_err(csv_err)?;
            for (g, m) in &c.matrices {
                for i in 0..m.n {
                    for j in 0..m.n {
                        let rho = m
                            .get(i, j)
                            .map_or_else(|| "undefined".to_string(), |v| format!("{v}"));
                        w.write_record([g.clone(), i.to_string(), j.to_string(), rho])
                            .map_err(csv_err)?;
                    }
                }
            }
            w.flush()?;
        }
        if let Some(stats) = &self.stats {
            let mut w = csv::Writer::from_path(dir.join("Fig5_stats.csv")).map_err(csv_err)?;
            let cols = ["whisker_lo", "q1", "median", "q3", "whisker_hi", "outliers"];
            let mut header = vec!["generator".to_string()];
            for stat in ["mean", "variance"] {
                header.extend(cols.iter().map(|c| format!("{stat}_{c}")));
            }
            w.write_record(&header).map_err(csv_err)?;
            for (g, s) in stats {
                let mut rec = vec![g.clone()];
                for b in [&s.mean_box, &s.variance_box] {
                    rec.extend(
                        [b.whisker_lo, b.q1, b.median, b.q3, b.whisker_hi].map(|v| format!("{v}")),
                    );
                    rec.push(b.outliers.to_string());
                }
                w.write_record(&rec).map_err(csv_err)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_solar, synth_wind, Provenance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_site(a: &[f64], b: &[f64]) -> ScenarioBatch {
        let mut d = a.to_vec();
        d.extend_from_slice(b);
        // shift into [0, 1]
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let d = d.iter().map(|v| (v - lo) / (hi - lo)).collect();
        ScenarioBatch::new(2, a.len(), d, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn pearson_examples() {
        let x = [0.1, 0.4, 0.2, 0.3];
        let m = pearson_matrix(&two_site(&x, &x.map(|v| 2.0 * v))).unwrap();
        assert!((m.get(0, 1).unwrap() - 1.0).abs() < 1e-12);
        let m = pearson_matrix(&two_site(&x, &x.map(|v| -v))).unwrap();
        assert!((m.get(0, 1).unwrap() + 1.0).abs() < 1e-12);
        let m =
            pearson_matrix(&two_site(&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0])).unwrap();
        assert!(m.get(0, 1).unwrap().abs() < 1e-12);
        assert_eq!(m.get(0, 0), Some(1.0));
    }

    #[test]
    fn constant_series_is_undefined_not_zero() {
        let b = ScenarioBatch::new(
            2,
            3,
            vec![0.5, 0.5, 0.5, 0.1, 0.2, 0.3],
            Provenance::Synthetic,
        )
        .unwrap();
        let m = pearson_matrix(&b).unwrap();
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.get(0, 0), None);
        assert_eq!(m.get(1, 1), Some(1.0));
        assert!(correlation_distance(&m, &m).is_err());
    }

    #[test]
    fn distance_examples() {
        let eye = CorrelationMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let ones = CorrelationMatrix::from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(correlation_distance(&eye, &eye).unwrap(), 0.0);
        assert!((correlation_distance(&eye, &ones).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            correlation_distance(&eye, &ones).unwrap(),
            correlation_distance(&ones, &eye).unwrap()
        );
        let three = CorrelationMatrix::from_dense(&vec![vec![1.0; 3]; 3]).unwrap();
        assert!(correlation_distance(&eye, &three).is_err());
    }

    #[test]
    fn stats_constant_scenarios() {
        let b = ScenarioBatch::new(1, 4, vec![0.5; 20], Provenance::Synthetic).unwrap();
        let s = generator_stats(&b).unwrap();
        assert!(s.means.iter().all(|&m| m == 0.5));
        assert!(s.variances.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stats_two_point_distribution() {
        let mut d = vec![0.0; 6];
        d.extend(vec![1.0; 6]);
        d.extend(vec![0.0; 3]);
        d.extend(vec![1.0; 3]);
        let b = ScenarioBatch::new(1, 3, d, Provenance::Synthetic).unwrap();
        let s = generator_stats(&b).unwrap();
        assert_eq!(s.mean_box.q1, 0.0);
        assert_eq!(s.mean_box.q3, 1.0);
    }

    #[test]
    fn stats_hand_built_quartiles() {
        // Scenario means 0.1, 0.2, 0.4, 0.5, 0.9 (constant rows).
        // Linear interpolation on 5 sorted points: q1 at position 1 -> 0.2,
        // median at 2 -> 0.4, q3 at 3 -> 0.5.
        let means = [0.4, 0.1, 0.9, 0.2, 0.5];
        let d: Vec<f64> = means.iter().flat_map(|&m| [m, m]).collect();
        let b = ScenarioBatch::new(1, 2, d, Provenance::Synthetic).unwrap();
        let s = generator_stats(&b).unwrap();
        assert!((s.mean_box.q1 - 0.2).abs() < 1e-15);
        assert!((s.mean_box.median - 0.4).abs() < 1e-15);
        assert!((s.mean_box.q3 - 0.5).abs() < 1e-15);
        // IQR 0.3 -> fences [-0.25, 0.95]; all points inside
        assert_eq!(s.mean_box.whisker_hi, 0.9);
        assert_eq!(s.mean_box.outliers, 0);
    }

    #[test]
    fn stats_need_four_samples() {
        let b = ScenarioBatch::new(1, 2, vec![0.1; 6], Provenance::Synthetic).unwrap();
        assert!(generator_stats(&b).is_err());
    }

    #[test]
    fn purity_pure_and_mixed() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let solar = synth_solar(40, 24, &mut r).unwrap();
        let rep = mode_purity(&solar, &ModeClassifier::WindSolar).unwrap();
        assert_eq!(rep.purity, 1.0);
        assert_eq!(rep.dominant_mode, Mode::Solar);

        let wind = synth_wind(40, 24, &mut r, crate::data::WindRegime::Gusty).unwrap();
        let mixed = solar.concat(&wind).unwrap();
        let rep = mode_purity(&mixed, &ModeClassifier::WindSolar).unwrap();
        assert_eq!(rep.purity, 0.5);
        assert_eq!(rep.counts.values().sum::<usize>(), rep.total);
    }

    #[test]
    fn classifier_family_mismatch() {
        assert!(ModeClassifier::for_labels(&[Mode::Group1, Mode::Group2]).is_err());
        assert!(ModeClassifier::for_labels(&[Mode::Wind, Mode::Calm]).is_err());
        assert_eq!(
            ModeClassifier::for_labels(&[Mode::Solar, Mode::Wind]).unwrap(),
            ModeClassifier::WindSolar
        );
        let multi = ScenarioBatch::new(2, 24, vec![0.1; 48], Provenance::Synthetic).unwrap();
        assert!(mode_purity(&multi, &ModeClassifier::WindSolar).is_err());
    }
}
