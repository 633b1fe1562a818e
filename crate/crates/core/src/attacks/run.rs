//! End-to-end attack driver and the score table it produces.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::farm::{ShadowFarm, TargetOracle};
use crate::rng::{self, tag};

use super::canary::{
    optimize_canary, random_noise_query, AccessCounters, AttackMode, CanaryConfig, ShadowPool,
};
use super::lira::{
    ensemble_scores, fit_gaussian, lira_offline_density_score, lira_offline_score,
    lira_online_score, scale_confidence, CONFIDENCE_CLAMP, SIGMA_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Lira,
    Canary,
    RandomNoise,
}

/// How an offline score reads the OUT Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineScore {
    #[default]
    TailProbability,
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub mode: AttackMode,
    /// Canary hyperparameters. `num_queries` applies to every method and
    /// `epsilon` also bounds the random-noise control; `mode` is taken from
    /// the field above.
    pub canary: CanaryConfig,
    /// Root of the per-target / per-query RNG streams.
    pub seed: u64,
    #[serde(default = "default_clamp")]
    pub confidence_clamp: f64,
    #[serde(default = "default_floor")]
    pub sigma_floor: f64,
    #[serde(default)]
    pub offline_score: OfflineScore,
}

fn default_clamp() -> f64 {
    CONFIDENCE_CLAMP
}

fn default_floor() -> f64 {
    SIGMA_FLOOR
}

impl AttackConfig {
    pub fn new(method: AttackMethod, mode: AttackMode, canary: CanaryConfig, seed: u64) -> Self {
        AttackConfig {
            method,
            mode,
            canary,
            seed,
            confidence_clamp: CONFIDENCE_CLAMP,
            sigma_floor: SIGMA_FLOOR,
            offline_score: OfflineScore::TailProbability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub index: usize,
    pub is_member: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetScores {
    pub index: usize,
    pub is_member: bool,
    pub query_scores: Vec<f64>,
    pub aggregated: f64,
}

/// Higher scores mean "member". Online scores are log likelihood ratios,
/// offline scores lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<TargetScores>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    target_index: usize,
    is_member: u8,
    query_id: usize,
    score: f64,
    aggregated_score: f64,
}

impl ScoreTable {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.aggregated).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.is_member).collect()
    }

    /// One line per (target, query):
    /// `target_index,is_member,query_id,score,aggregated_score`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            for (q, &score) in row.query_scores.iter().enumerate() {
                w.serialize(CsvRow {
                    target_index: row.index,
                    is_member: u8::from(row.is_member),
                    query_id: q,
                    score,
                    aggregated_score: row.aggregated,
                })?;
            }
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rows: Vec<TargetScores> = Vec::new();
        for (line, rec) in csv::Reader::from_reader(reader).deserialize::<CsvRow>().enumerate() {
            let rec = rec?;
            let bad = |msg: &str| Error::Format(format!("score table line {}: {msg}", line + 2));
            if rec.is_member > 1 {
                return Err(bad("is_member must be 0 or 1"));
            }
            let is_member = rec.is_member == 1;
            match rows.last_mut() {
                Some(last) if last.index == rec.target_index && rec.query_id > 0 => {
                    if rec.query_id != last.query_scores.len()
                        || last.is_member != is_member
                        || last.aggregated.to_bits() != rec.aggregated_score.to_bits()
                    {
                        return Err(bad("inconsistent rows for one target"));
                    }
                    last.query_scores.push(rec.score);
                }
                _ => {
                    if rec.query_id != 0 {
                        return Err(bad("first query of a target must have query_id 0"));
                    }
                    rows.push(TargetScores {
                        index: rec.target_index,
                        is_member,
                        query_scores: vec![rec.score],
                        aggregated: rec.aggregated_score,
                    });
                }
            }
        }
        Ok(ScoreTable { rows })
    }
}

/// Counts gathered over one [`run_attack`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttackStats {
    pub in_model_evals: u64,
    pub out_model_evals: u64,
    pub oracle_queries: u64,
    pub target_param_reads: u64,
}

/// Scores every target against the oracle using the shadow farm.
///
/// Per target and query: build the query point, gather logit-scaled
/// shadow confidences, fit Gaussians, query the target once, score, and
/// average over queries. Offline mode never evaluates an IN model.
pub fn run_attack(
    oracle: &TargetOracle,
    farm: &ShadowFarm,
    dataset: &Dataset,
    targets: &[Target],
    config: &AttackConfig,
) -> Result<(ScoreTable, AttackStats)> {
    if oracle.fingerprint() != farm.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: farm.fingerprint(),
            found: oracle.fingerprint(),
        });
    }
    farm.verify_dataset(dataset)?;
    let canary = CanaryConfig {
        mode: config.mode,
        ..config.canary.clone()
    };
    canary.validate()?;
    for t in targets {
        if oracle.is_member(t.index)? != t.is_member {
            return Err(Error::InvalidArgument(format!(
                "target {} is labelled member={} but the target split says otherwise",
                t.index, t.is_member
            )));
        }
    }

    let counters = AccessCounters::default();
    let queries_before = oracle.query_count();
    let reads_before = oracle.param_reads();
    let rows = targets
        .par_iter()
        .map(|t| score_target(oracle, farm, dataset, *t, config, &canary, &counters))
        .collect::<Result<Vec<_>>>()?;
    let stats = AttackStats {
        in_model_evals: counters.in_model_evals(),
        out_model_evals: counters.out_model_evals(),
        oracle_queries: oracle.query_count() - queries_before,
        target_param_reads: oracle.param_reads() - reads_before,
    };
    Ok((ScoreTable { rows }, stats))
}

fn score_target(
    oracle: &TargetOracle,
    farm: &ShadowFarm,
    dataset: &Dataset,
    target: Target,
    config: &AttackConfig,
    canary: &CanaryConfig,
    counters: &AccessCounters,
) -> Result<TargetScores> {
    let (ins, outs) = farm.partition_indices(target.index)?;
    let online = config.mode == AttackMode::Online;
    if outs.is_empty() || (online && ins.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "target {} has {} IN and {} OUT shadow models",
            target.index,
            ins.len(),
            outs.len()
        )));
    }
    let models = farm.models();
    let pool = ShadowPool::new(
        ins.iter().map(|&m| &models[m]).collect(),
        outs.iter().map(|&m| &models[m]).collect(),
        counters,
    );
    let x_star = dataset.features(target.index);
    let y = dataset.label(target.index);
    let alt_label = {
        use rand::Rng;
        let mut r = rng::stream(config.seed, &[tag::ALT_LABEL, target.index as u64]);
        let a = r.random_range(0..dataset.num_classes() - 1);
        Some(if a >= y { a + 1 } else { a })
    };
    let phi = |f: f64| scale_confidence(f, config.confidence_clamp);

    let mut query_scores = Vec::with_capacity(canary.num_queries);
    for q in 0..canary.num_queries {
        let mut r = rng::stream(config.seed, &[tag::QUERY, target.index as u64, q as u64]);
        let query = match config.method {
            AttackMethod::Lira => x_star.to_vec(),
            AttackMethod::Canary => {
                optimize_canary(x_star, y, alt_label, &pool, &dataset.domain(), canary, &mut r)?
            }
            AttackMethod::RandomNoise => {
                random_noise_query(x_star, canary.epsilon, &dataset.domain(), &mut r)?
            }
        };
        let out_phis = (0..pool.n_out())
            .map(|i| pool.out_model(i).confidence(&query, y).map(phi))
            .collect::<Result<Vec<_>>>()?;
        let out_stats = fit_gaussian(&out_phis, config.sigma_floor)?;
        let conf_t = phi(oracle.confidence(&query, y)?);
        let score = if online {
            let in_phis = (0..pool.n_in())
                .map(|i| pool.in_model(i).confidence(&query, y).map(phi))
                .collect::<Result<Vec<_>>>()?;
            let in_stats = fit_gaussian(&in_phis, config.sigma_floor)?;
            lira_online_score(conf_t, &in_stats, &out_stats).log_ratio
        } else {
            match config.offline_score {
                OfflineScore::TailProbability => lira_offline_score(conf_t, &out_stats),
                OfflineScore::Density => lira_offline_density_score(conf_t, &out_stats),
            }
        };
        query_scores.push(score);
    }
    let aggregated = ensemble_scores(&query_scores)?;
    Ok(TargetScores {
        index: target.index,
        is_member: target.is_member,
        query_scores,
        aggregated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_layout() {
        let table = ScoreTable {
            rows: vec![
                TargetScores {
                    index: 4,
                    is_member: true,
                    query_scores: vec![0.5, -1.25],
                    aggregated: -0.375,
                },
                TargetScores {
                    index: 1,
                    is_member: false,
                    query_scores: vec![0.1, 0.2],
                    aggregated: 0.15000000000000002,
                },
            ],
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("target_index,is_member,query_id,score,aggregated_score\n4,1,0,0.5,-0.375\n"));
        assert_eq!(ScoreTable::read_csv(&buf[..]).unwrap(), table);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let header = "target_index,is_member,query_id,score,aggregated_score\n";
        for body in ["0,2,0,0.1,0.1\n", "0,1,1,0.1,0.1\n", "0,1,0,0.1,0.1\n0,0,1,0.2,0.1\n"] {
            let text = format!("{header}{body}");
            assert!(ScoreTable::read_csv(text.as_bytes()).is_err(), "{body}");
        }
    }
}
