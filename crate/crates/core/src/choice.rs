//! Logit choice over final reports driven by empirical optimality and weak
//! dominance, with maximum likelihood fitting and a cluster bootstrap.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::best_responses;
use crate::model::PayoffParams;
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub own_peak: u32,
    /// Distinct partner reports seen during the reporting period.
    pub observed_partner_reports: BTreeSet<u32>,
    pub final_report: u32,
    pub cluster_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceParams {
    pub lambda_e: f64,
    pub lambda_d: f64,
}

impl ChoiceParams {
    pub const ZERO: ChoiceParams = ChoiceParams {
        lambda_e: 0.0,
        lambda_d: 0.0,
    };

    pub fn new(lambda_e: f64, lambda_d: f64) -> Self {
        Self { lambda_e, lambda_d }
    }

    fn norm(&self) -> f64 {
        self.lambda_e.hypot(self.lambda_d)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChoiceError {
    #[error("no partner report was observed")]
    EmptyObservations,
    #[error("report {0} is outside 0..={1}")]
    OutOfRange(u32, u32),
    #[error("no observations to fit")]
    NoData,
    #[error(
        "likelihood keeps increasing toward the boundary (last iterate λ_E={:.3}, λ_D={:.3}); no finite maximiser",
        last.lambda_e,
        last.lambda_d
    )]
    BoundaryDivergence { last: ChoiceParams, log_likelihood: f64 },
    #[error("row {row}: {reason}")]
    Parse { row: usize, reason: String },
}

/// Reports that maximise payoff against every observed partner report.
pub fn empirically_optimal_set(
    obs: &ObservationSet,
    params: &PayoffParams,
) -> Result<BTreeSet<u32>, ChoiceError> {
    let mut iter = obs.observed_partner_reports.iter();
    let first = iter.next().ok_or(ChoiceError::EmptyObservations)?;
    for &r in std::iter::once(first).chain(iter.clone()) {
        if r > params.supply {
            return Err(ChoiceError::OutOfRange(r, params.supply));
        }
    }
    let mut set = best_responses(obs.own_peak, *first, params);
    for &r in iter {
        let br = best_responses(obs.own_peak, r, params);
        set.retain(|x| br.contains(x));
    }
    Ok(set)
}

/// P(x) ∝ exp(λ_E·E(x) + λ_D·D(x)) over every report x.
pub fn choice_probabilities(
    obs: &ObservationSet,
    theta: &ChoiceParams,
    params: &PayoffParams,
) -> Result<Vec<f64>, ChoiceError> {
    let e = empirically_optimal_set(obs, params)?;
    let attractions: Vec<f64> = (0..=params.supply)
        .map(|x| {
            let ei = if e.contains(&x) { 1.0 } else { 0.0 };
            let di = if x == obs.own_peak { 1.0 } else { 0.0 };
            theta.lambda_e * ei + theta.lambda_d * di
        })
        .collect();
    let m = attractions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = attractions.iter().map(|a| (a - m).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Chosen {
    Peak,
    OtherOptimal,
    Neither,
}

/// An observation reduced to what the likelihood depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Prepared {
    optimal: usize,
    chosen: Chosen,
    options: usize,
}

fn prepare(data: &[ObservationSet], params: &PayoffParams) -> Result<Vec<Prepared>, ChoiceError> {
    data.iter()
        .map(|o| {
            if o.final_report > params.supply {
                return Err(ChoiceError::OutOfRange(o.final_report, params.supply));
            }
            let e = empirically_optimal_set(o, params)?;
            let chosen = if o.final_report == o.own_peak {
                Chosen::Peak
            } else if e.contains(&o.final_report) {
                Chosen::OtherOptimal
            } else {
                Chosen::Neither
            };
            Ok(Prepared {
                optimal: e.len(),
                chosen,
                options: params.supply as usize + 1,
            })
        })
        .collect()
}

/// Identical observations collapsed into weighted cells.
fn aggregate(data: &[Prepared]) -> Vec<(Prepared, f64)> {
    let mut cells: BTreeMap<Prepared, f64> = BTreeMap::new();
    for p in data {
        *cells.entry(*p).or_default() += 1.0;
    }
    cells.into_iter().collect()
}

/// Log-likelihood, gradient and Hessian in (λ_E, λ_D).
fn derivatives(cells: &[(Prepared, f64)], t: &ChoiceParams) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let mut ll = 0.0;
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    for (p, c) in cells {
        // three attraction classes: the peak, other optimal reports, the rest
        let a = [t.lambda_e + t.lambda_d, t.lambda_e, 0.0];
        let n = [1.0, (p.optimal - 1) as f64, (p.options - p.optimal) as f64];
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = (0..3).map(|i| n[i] * (a[i] - m).exp()).collect();
        let z: f64 = w.iter().sum();
        let q: Vec<f64> = w.iter().map(|x| x / z).collect();
        let pe = q[0] + q[1];
        let pd = q[0];
        let (ey, dy, ay) = match p.chosen {
            Chosen::Peak => (1.0, 1.0, a[0]),
            Chosen::OtherOptimal => (1.0, 0.0, a[1]),
            Chosen::Neither => (0.0, 0.0, a[2]),
        };
        ll += c * (ay - m - z.ln());
        g[0] += c * (ey - pe);
        g[1] += c * (dy - pd);
        h[0][0] -= c * pe * (1.0 - pe);
        h[1][1] -= c * pd * (1.0 - pd);
        h[0][1] -= c * (pd - pe * pd);
    }
    h[1][0] = h[0][1];
    (ll, g, h)
}

pub fn log_likelihood(
    data: &[ObservationSet],
    theta: &ChoiceParams,
    params: &PayoffParams,
) -> Result<f64, ChoiceError> {
    Ok(derivatives(&aggregate(&prepare(data, params)?), theta).0)
}

pub fn log_likelihood_gradient(
    data: &[ObservationSet],
    theta: &ChoiceParams,
    params: &PayoffParams,
) -> Result<[f64; 2], ChoiceError> {
    Ok(derivatives(&aggregate(&prepare(data, params)?), theta).1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Parameter norm past which the maximiser is declared to lie at infinity.
    pub divergence_norm: f64,
    pub bootstrap_replicates: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 500,
            divergence_norm: 40.0,
            bootstrap_replicates: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub params: ChoiceParams,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// False when the two indicators coincide on every observation, so
    /// only λ_E + λ_D is determined.
    pub identified: bool,
}

fn maximise(data: &[Prepared], cfg: &FitConfig) -> Result<PointEstimate, ChoiceError> {
    if data.is_empty() {
        return Err(ChoiceError::NoData);
    }
    let separable = separating_direction(data).is_some();
    let data = aggregate(data);
    let data = data.as_slice();
    let mut t = ChoiceParams::ZERO;
    let (mut ll, mut g, mut h) = derivatives(data, &t);
    let identified = data.iter().any(|(p, _)| p.optimal > 1);
    let mut iterations = cfg.max_iterations;
    for it in 0..cfg.max_iterations {
        let gn = g[0].hypot(g[1]);
        if separable && (gn < cfg.tolerance || t.norm() > cfg.divergence_norm) {
            return Err(ChoiceError::BoundaryDivergence {
                last: t,
                log_likelihood: ll,
            });
        }
        if gn < cfg.tolerance {
            return Ok(PointEstimate {
                params: t,
                log_likelihood: ll,
                gradient_norm: gn,
                iterations: it,
                identified,
            });
        }
        if t.norm() > cfg.divergence_norm {
            return Err(ChoiceError::BoundaryDivergence {
                last: t,
                log_likelihood: ll,
            });
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let scale = h[0][0].abs().max(h[1][1].abs()).max(1e-300);
        let dir = if h[0][0] < 0.0 && det > 1e-10 * scale * scale {
            [
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
            ]
        } else {
            // flat or collinear curvature: fall back to the gradient
            let s = (1.0 / scale).min(5.0 / g[0].hypot(g[1]));
            [g[0] * s, g[1] * s]
        };
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-12 {
            let cand = ChoiceParams::new(t.lambda_e + step * dir[0], t.lambda_d + step * dir[1]);
            let (cll, cg, ch) = derivatives(data, &cand);
            if cll >= ll {
                t = cand;
                ll = cll;
                g = cg;
                h = ch;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // no ascent left at working precision
            iterations = it;
            break;
        }
    }
    let gn = g[0].hypot(g[1]);
    if separable || t.norm() > cfg.divergence_norm / 2.0 {
        Err(ChoiceError::BoundaryDivergence {
            last: t,
            log_likelihood: ll,
        })
    } else {
        Ok(PointEstimate {
            params: t,
            log_likelihood: ll,
            gradient_norm: gn,
            iterations,
            identified,
        })
    }
}

fn features(chosen: Chosen) -> [i32; 2] {
    match chosen {
        Chosen::Peak => [1, 1],
        Chosen::OtherOptimal => [1, 0],
        Chosen::Neither => [0, 0],
    }
}

/// A direction along which the likelihood never decreases and strictly
/// increases somewhere, i.e. the data are separable and no finite
/// maximiser exists.
fn separating_direction(data: &[Prepared]) -> Option<[i32; 2]> {
    let mut diffs: BTreeSet<[i32; 2]> = BTreeSet::new();
    for p in data {
        let y = features(p.chosen);
        let mut alts = vec![Chosen::Peak];
        if p.optimal > 1 {
            alts.push(Chosen::OtherOptimal);
        }
        if p.optimal < p.options {
            alts.push(Chosen::Neither);
        }
        for a in alts {
            let f = features(a);
            let d = [y[0] - f[0], y[1] - f[1]];
            if d != [0, 0] {
                diffs.insert(d);
            }
        }
    }
    // an extreme ray of the feasible cone is normal to some constraint
    let candidates = diffs
        .iter()
        .flat_map(|d| [*d, [-d[1], d[0]], [d[1], -d[0]]]);
    for v in candidates {
        let dots: Vec<i32> = diffs.iter().map(|d| v[0] * d[0] + v[1] * d[1]).collect();
        if dots.iter().all(|x| *x >= 0) && dots.iter().any(|x| *x > 0) {
            return Some(v);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub estimate: PointEstimate,
    pub observations: usize,
    pub clusters: usize,
    /// `None` when fewer than two clusters make resampling degenerate.
    pub standard_errors: Option<[f64; 2]>,
    pub single_cluster: bool,
    pub replicates_used: usize,
    pub replicates_diverged: usize,
}

/// Maximum likelihood estimate with cluster bootstrap standard errors.
pub fn fit_mle(
    data: &[ObservationSet],
    params: &PayoffParams,
    cfg: &FitConfig,
) -> Result<MleFit, ChoiceError> {
    let prepared = prepare(data, params)?;
    let estimate = maximise(&prepared, cfg)?;
    let mut by_cluster: BTreeMap<&str, Vec<Prepared>> = BTreeMap::new();
    for (o, p) in data.iter().zip(&prepared) {
        by_cluster.entry(o.cluster_id.as_str()).or_default().push(*p);
    }
    let clusters: Vec<Vec<Prepared>> = by_cluster.into_values().collect();
    let single_cluster = clusters.len() < 2;
    let (standard_errors, used, diverged) = if single_cluster || cfg.bootstrap_replicates == 0 {
        (None, 0, 0)
    } else {
        bootstrap(&clusters, cfg)
    };
    Ok(MleFit {
        estimate,
        observations: data.len(),
        clusters: clusters.len(),
        standard_errors,
        single_cluster,
        replicates_used: used,
        replicates_diverged: diverged,
    })
}

fn bootstrap(clusters: &[Vec<Prepared>], cfg: &FitConfig) -> (Option<[f64; 2]>, usize, usize) {
    let fits: Vec<Option<ChoiceParams>> = (0..cfg.bootstrap_replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64 + 1);
            let mut sample = Vec::new();
            for _ in 0..clusters.len() {
                sample.extend_from_slice(&clusters[rng.random_range(0..clusters.len())]);
            }
            let inner = FitConfig {
                bootstrap_replicates: 0,
                ..*cfg
            };
            maximise(&sample, &inner).ok().map(|e| e.params)
        })
        .collect();
    let ok: Vec<ChoiceParams> = fits.iter().flatten().copied().collect();
    let diverged = fits.len() - ok.len();
    if ok.len() < 2 {
        return (None, ok.len(), diverged);
    }
    let sd = |f: fn(&ChoiceParams) -> f64| {
        let n = ok.len() as f64;
        let mean = ok.iter().map(f).sum::<f64>() / n;
        (ok.iter().map(|p| (f(p) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (
        Some([sd(|p| p.lambda_e), sd(|p| p.lambda_d)]),
        ok.len(),
        diverged,
    )
}

/// Mean model probability of reporting the peak.
pub fn predicted_peak_rate(
    data: &[ObservationSet],
    theta: &ChoiceParams,
    params: &PayoffParams,
) -> Result<f64, ChoiceError> {
    if data.is_empty() {
        return Err(ChoiceError::NoData);
    }
    let mut total = 0.0;
    for o in data {
        total += choice_probabilities(o, theta, params)?[o.own_peak as usize];
    }
    Ok(total / data.len() as f64)
}

/// Replaces every final report with a draw from the model.
pub fn simulate_choices<R: Rng>(
    template: &[ObservationSet],
    theta: &ChoiceParams,
    params: &PayoffParams,
    rng: &mut R,
) -> Result<Vec<ObservationSet>, ChoiceError> {
    template
        .iter()
        .map(|o| {
            let p = choice_probabilities(o, theta, params)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = p.len() - 1;
            for (x, px) in p.iter().enumerate() {
                acc += px;
                if u < acc {
                    pick = x;
                    break;
                }
            }
            Ok(ObservationSet {
                final_report: pick as u32,
                ..o.clone()
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    peak: u32,
    observed: String,
    #[serde(rename = "final")]
    final_report: u32,
    cluster: String,
}

/// Rows that could not be used, with the reason.
pub type Excluded = Vec<(usize, String)>;

/// Reads `peak,observed,final,cluster` rows; `observed` is a list separated
/// by spaces or semicolons. Rows with nothing observed are set aside.
pub fn read_observations_csv<R: Read>(
    reader: R,
    params: &PayoffParams,
) -> Result<(Vec<ObservationSet>, Excluded), ChoiceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    let mut excluded = Vec::new();
    for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ChoiceError::Parse {
            row,
            reason: e.to_string(),
        })?;
        let observed: BTreeSet<u32> = rec
            .observed
            .split([' ', ';'])
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| ChoiceError::Parse {
                    row,
                    reason: format!("bad report {s:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        for &r in observed.iter().chain([&rec.peak, &rec.final_report]) {
            if r > params.supply {
                return Err(ChoiceError::Parse {
                    row,
                    reason: format!("report {r} exceeds supply {}", params.supply),
                });
            }
        }
        if observed.is_empty() {
            excluded.push((row, "no partner report observed".to_string()));
            continue;
        }
        out.push(ObservationSet {
            own_peak: rec.peak,
            observed_partner_reports: observed,
            final_report: rec.final_report,
            cluster_id: rec.cluster,
        });
    }
    Ok((out, excluded))
}

pub fn fit_table(label: &str, fit: &MleFit, peak_rate: f64) -> Table {
    let mut t = Table::new(
        format!("Logit choice estimates ({label})"),
        format!(
            "Newton ascent to gradient norm {:.1e}; session-clustered bootstrap, {} replicates",
            fit.estimate.gradient_norm, fit.replicates_used
        ),
        &["parameter", "estimate", "bootstrap se"],
    );
    let se = |i: usize| {
        fit.standard_errors
            .map(|s| format!("{:.3}", s[i]))
            .unwrap_or_else(|| "undefined".into())
    };
    t.push(vec!["lambda_E".into(), format!("{:.3}", fit.estimate.params.lambda_e), se(0)]);
    t.push(vec!["lambda_D".into(), format!("{:.3}", fit.estimate.params.lambda_d), se(1)]);
    t.push(vec!["log-likelihood".into(), format!("{:.3}", fit.estimate.log_likelihood), String::new()]);
    t.push(vec!["observations".into(), fit.observations.to_string(), String::new()]);
    t.push(vec!["clusters".into(), fit.clusters.to_string(), String::new()]);
    t.push(vec!["predicted peak rate".into(), format!("{peak_rate:.3}"), String::new()]);
    if fit.single_cluster {
        t.note("single cluster: bootstrap standard errors are undefined");
    }
    if !fit.estimate.identified {
        t.note("every optimal set is the peak alone, so only lambda_E + lambda_D is identified");
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(peak: u32, seen: &[u32], fin: u32) -> ObservationSet {
        ObservationSet {
            own_peak: peak,
            observed_partner_reports: seen.iter().copied().collect(),
            final_report: fin,
            cluster_id: "s1".into(),
        }
    }

    fn pp() -> PayoffParams {
        PayoffParams::default()
    }

    #[test]
    fn optimal_sets() {
        assert_eq!(empirically_optimal_set(&obs(5, &[16], 5), &pp()).unwrap(), BTreeSet::from([5]));
        assert_eq!(
            empirically_optimal_set(&obs(3, &[10], 3), &pp()).unwrap(),
            (0..=20).collect()
        );
        assert_eq!(
            empirically_optimal_set(&obs(3, &[], 3), &pp()),
            Err(ChoiceError::EmptyObservations)
        );
    }

    #[test]
    fn probabilities() {
        let p = choice_probabilities(&obs(5, &[16], 5), &ChoiceParams::ZERO, &pp()).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 21.0).abs() < 1e-15));
        let p = choice_probabilities(&obs(5, &[16], 5), &ChoiceParams::new(60.0, 0.0), &pp()).unwrap();
        assert!(p[5] > 1.0 - 1e-12);
        let o = obs(5, &[12, 16], 5);
        let p = choice_probabilities(&o, &ChoiceParams::new(0.734, 2.352), &pp()).unwrap();
        assert!((0..=20).filter(|x| *x != 5).all(|x| p[5] > p[x]));
    }

    #[test]
    fn single_cluster_has_no_standard_errors() {
        let data: Vec<_> = (0..50).map(|i| obs(5, &[16, i % 21], (i * 4) % 21)).collect();
        let fit = fit_mle(&data, &pp(), &FitConfig::default()).unwrap();
        assert!(fit.single_cluster);
        assert_eq!(fit.standard_errors, None);
    }

    #[test]
    fn all_peak_reports_diverge() {
        let data: Vec<_> = (0..30).map(|_| obs(5, &[16], 5)).collect();
        match fit_mle(&data, &pp(), &FitConfig::default()) {
            Err(ChoiceError::BoundaryDivergence { last, .. }) => {
                let rate = predicted_peak_rate(&data, &last, &pp()).unwrap();
                assert!(rate > 0.99 && rate <= 1.0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn csv_ingestion_sets_aside_empty_rows() {
        let text = "peak,observed,final,cluster\n5,16;12,5,a\n3,,3,a\n9,11 10,9,b\n";
        let (rows, excluded) = read_observations_csv(text.as_bytes(), &pp()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(excluded, vec![(3, "no partner report observed".to_string())]);
        assert_eq!(rows[1].observed_partner_reports, BTreeSet::from([10, 11]));
    }
}
