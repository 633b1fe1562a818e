//! Membership inference attacks: LiRA scoring, canary queries, and the
//! driver that runs them against a held-out target.

mod canary;
mod lira;
mod run;

pub use canary::{
    optimize_canary, optimize_canary_traced, random_noise_query, AccessCounters, AttackMode,
    CanaryConfig, CanaryInit, ShadowPool,
};
pub use lira::{
    ensemble_scores, fit_gaussian, lira_offline_density_score, lira_offline_score,
    lira_online_score, scale_confidence, GaussianStats, LikelihoodRatio, CONFIDENCE_CLAMP,
    SIGMA_FLOOR,
};
pub use run::{
    run_attack, AttackConfig, AttackMethod, AttackStats, OfflineScore, ScoreTable, Target,
    TargetScores,
};
