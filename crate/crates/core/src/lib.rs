//! A coverage-guided greybox fuzzing engine for guarded-CFG targets.
//!
//! The engine runs an ordinary havoc-style carrier fuzzer until edge
//! coverage stalls. It then:
//!
//! 1. estimates a discrete-time Markov chain over the target's blocks from
//!    the observed edge counts ([`markov`]),
//! 2. ranks uncovered blocks by their expected coverage reward and selects
//!    rarely reached predecessor blocks as *critical* ([`markov`]),
//! 3. trains an attention classifier per critical block that predicts
//!    whether a mutated input still reaches it ([`attention`]),
//! 4. turns the classifier's attention weights into per-seed, per-mutator
//!    heat maps and protects hot bytes from mutation ([`guidance`]).
//!
//! [`orchestrator`] wires the stages into a campaign loop and persists
//! everything under an output directory.
//!
//! Numeric code in [`markov`] and [`attention`] is generic over
//! [`Scalar`]; the aliases below fix it to `f64`, which the campaign uses.

pub mod attention;
pub mod coverage;
pub mod guidance;
pub mod markov;
pub mod mutation;
pub mod orchestrator;
pub mod target;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point type the numeric stages are generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    /// Lossy conversion from `f64`, used for constants.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type Dtmc = markov::Dtmc<f64>;
pub type RewardVector = markov::RewardVector<f64>;
pub type ModelParams = attention::ModelParams<f64>;
pub type ModelParamsF32 = attention::ModelParams<f32>;
pub type HeatMap = attention::HeatMap<f64>;
pub type GuidancePlan = guidance::GuidancePlan<f64>;

pub use coverage::{BlockSet, CoverageBitmap, EdgeHashDict, ExecutionRecord, GlobalCoverage};
pub use mutation::{Mutation, MutatorId, TokenDictionary};
pub use orchestrator::{run_campaign, CampaignReport, FuzzerConfig, Mode};
pub use target::{build_cfg, parse_target, BlockId, Cfg, ExecutionTrace, TargetProgram};
