//! Confidence scores over the novice's outputs. Every score is oriented so
//! that larger means more confident; control is yielded when a score falls
//! below a threshold.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Adam};
use crate::policy::{PolicyOutput, PolicyParams, FORMAT_VERSION};
use crate::seed;

/// Novice features for one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub obs: Vec<f64>,
    pub hidden: Vec<f64>,
    pub dist: Vec<f64>,
    pub logits: Vec<f64>,
}

impl FeatureBundle {
    pub fn new(obs: Vec<f64>, out: PolicyOutput) -> Self {
        FeatureBundle {
            obs,
            hidden: out.hidden,
            dist: out.dist,
            logits: out.logits,
        }
    }

    pub fn policy_output(&self) -> PolicyOutput {
        PolicyOutput {
            logits: self.logits.clone(),
            dist: self.dist.clone(),
            hidden: self.hidden.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    MaxLogit,
    MaxProb,
    Margin,
    NegEntropy,
    NegEnergy,
    Svdd,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 6] = [
        MeasureKind::MaxLogit,
        MeasureKind::MaxProb,
        MeasureKind::Margin,
        MeasureKind::NegEntropy,
        MeasureKind::NegEnergy,
        MeasureKind::Svdd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::MaxLogit => "max_logit",
            MeasureKind::MaxProb => "max_prob",
            MeasureKind::Margin => "margin",
            MeasureKind::NegEntropy => "neg_entropy",
            MeasureKind::NegEnergy => "neg_energy",
            MeasureKind::Svdd => "svdd",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_").to_ascii_lowercase();
        MeasureKind::ALL
            .into_iter()
            .find(|m| m.name() == norm || m.name().replace('_', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown measure `{s}`")))
    }
}

pub fn max_logit(logits: &[f64]) -> f64 {
    logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn max_prob(dist: &[f64]) -> f64 {
    dist.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Gap between the two largest probabilities.
pub fn margin(dist: &[f64]) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in dist {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    if second == f64::NEG_INFINITY {
        first
    } else {
        first - second
    }
}

/// `Σ p ln p` with `0 ln 0 = 0`.
pub fn neg_entropy(dist: &[f64]) -> f64 {
    dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum()
}

/// `ln Σ exp(z)` at temperature 1.
pub fn neg_energy(logits: &[f64]) -> f64 {
    nn::log_sum_exp(logits)
}

/// Logit-based score of `bundle`. SVDD needs a trained model, see [`Scorer`].
pub fn score(measure: MeasureKind, bundle: &FeatureBundle) -> Result<f64> {
    Ok(match measure {
        MeasureKind::MaxLogit => max_logit(&bundle.logits),
        MeasureKind::MaxProb => max_prob(&bundle.dist),
        MeasureKind::Margin => margin(&bundle.dist),
        MeasureKind::NegEntropy => neg_entropy(&bundle.dist),
        MeasureKind::NegEnergy => neg_energy(&bundle.logits),
        MeasureKind::Svdd => return Err(Error::Config("svdd scoring requires a trained model".into())),
    })
}

/// Nonempty subset of `{obs, hidden, dist}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureSelector {
    pub obs: bool,
    pub hidden: bool,
    pub dist: bool,
}

impl FeatureSelector {
    pub const HIDDEN: FeatureSelector = FeatureSelector {
        obs: false,
        hidden: true,
        dist: false,
    };

    pub fn new(obs: bool, hidden: bool, dist: bool) -> Result<Self> {
        if !(obs || hidden || dist) {
            return Err(Error::Config("feature selector must be nonempty".into()));
        }
        Ok(FeatureSelector { obs, hidden, dist })
    }

    /// The seven nonempty subsets in a fixed order.
    pub fn all() -> Vec<FeatureSelector> {
        (1u8..8)
            .map(|bits| FeatureSelector {
                obs: bits & 1 != 0,
                hidden: bits & 2 != 0,
                dist: bits & 4 != 0,
            })
            .collect()
    }

    pub fn dim(&self, obs_dim: usize, hidden_dim: usize, action_count: usize) -> usize {
        let mut n = 0;
        if self.obs {
            n += obs_dim;
        }
        if self.hidden {
            n += hidden_dim;
        }
        if self.dist {
            n += action_count;
        }
        n
    }

    /// Concatenation in the canonical order obs, hidden, dist.
    pub fn extract(&self, bundle: &FeatureBundle) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(bundle.obs.len(), bundle.hidden.len(), bundle.dist.len()));
        if self.obs {
            out.extend_from_slice(&bundle.obs);
        }
        if self.hidden {
            out.extend_from_slice(&bundle.hidden);
        }
        if self.dist {
            out.extend_from_slice(&bundle.dist);
        }
        out
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.obs {
            v.push("obs");
        }
        if self.hidden {
            v.push("hidden");
        }
        if self.dist {
            v.push("dist");
        }
        v
    }
}

impl fmt::Display for FeatureSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join("+"))
    }
}

impl FromStr for FeatureSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mut obs, mut hidden, mut dist) = (false, false, false);
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "obs" => obs = true,
                "hidden" => hidden = true,
                "dist" => dist = true,
                other => return Err(Error::Config(format!("unknown feature `{other}`"))),
            }
        }
        FeatureSelector::new(obs, hidden, dist)
    }
}

impl Serialize for FeatureSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names.join("+").parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvddConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for SvddConfig {
    fn default() -> Self {
        SvddConfig {
            hidden_dim: 32,
            embed_dim: 16,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

pub const MIN_SVDD_SAMPLES: usize = 100;
/// Center coordinates closer to zero than this are pushed out to it, so the
/// encoder cannot reach the center by zeroing its weights.
const CENTER_EPS: f64 = 0.1;

/// One-class hypersphere detector: a shallow encoder whose output-layer bias
/// is pinned at zero, and a fixed center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvddModel {
    #[serde(flatten)]
    pub encoder: PolicyParams,
    pub center: Vec<f64>,
    pub selector: FeatureSelector,
}

impl SvddModel {
    pub fn embed(&self, input: &[f64]) -> Vec<f64> {
        let hidden = self.encoder.hidden(input);
        self.encoder.output_layer(&hidden)
    }

    pub fn squared_distance(&self, input: &[f64]) -> f64 {
        self.embed(input)
            .iter()
            .zip(&self.center)
            .map(|(e, c)| (e - c) * (e - c))
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SvddDocument {
            version: FORMAT_VERSION,
            input_dim: self.encoder.input_dim(),
            hidden_dim: self.encoder.hidden_dim(),
            embed_dim: self.encoder.output_dim(),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SvddDocument = serde_json::from_str(text)?;
        if doc.version != FORMAT_VERSION {
            return Err(Error::Version(doc.version));
        }
        let enc = &doc.model.encoder;
        for (expected, actual) in [
            (doc.input_dim, enc.input_dim()),
            (doc.hidden_dim, enc.hidden_dim()),
            (doc.embed_dim, enc.output_dim()),
            (doc.embed_dim, doc.model.center.len()),
        ] {
            if expected != actual {
                return Err(Error::Dimension { expected, actual });
            }
        }
        Ok(doc.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SvddDocument {
    version: u32,
    input_dim: usize,
    hidden_dim: usize,
    embed_dim: usize,
    #[serde(flatten)]
    model: SvddModel,
}

/// Fits the detector to `bundles` by minimising the mean squared distance of
/// embeddings to a center fixed from the initial encoder's mean embedding.
pub fn train_svdd(
    bundles: &[FeatureBundle],
    selector: FeatureSelector,
    cfg: &SvddConfig,
    seed: u64,
) -> Result<SvddModel> {
    if bundles.len() < MIN_SVDD_SAMPLES {
        return Err(Error::Config(format!(
            "svdd needs at least {MIN_SVDD_SAMPLES} samples, got {}",
            bundles.len()
        )));
    }
    let inputs: Vec<Vec<f64>> = bundles.iter().map(|b| selector.extract(b)).collect();
    if inputs.iter().all(|x| x == &inputs[0]) {
        log::warn!("svdd training inputs are all identical; the detector is degenerate");
    }
    let input_dim = inputs[0].len();
    let encoder = PolicyParams::init(input_dim, cfg.hidden_dim, cfg.embed_dim, seed::derive(seed, "svdd", 0));
    let mut model = SvddModel {
        center: vec![0.0; cfg.embed_dim],
        encoder,
        selector,
    };

    let n = inputs.len() as f64;
    let mut center = vec![0.0; cfg.embed_dim];
    for x in &inputs {
        for (c, e) in center.iter_mut().zip(model.embed(x)) {
            *c += e / n;
        }
    }
    for c in &mut center {
        if c.abs() < CENTER_EPS {
            *c = if *c < 0.0 { -CENTER_EPS } else { CENTER_EPS };
        }
    }
    model.center = center;

    let mut opt = Adam::new(cfg.learning_rate, &model.encoder.shapes());
    let mut rng = seed::derived_rng(seed, "svdd-batches", 0);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let enc = &model.encoder;
            let mut grads = PolicyParams::zeros(enc.input_dim(), enc.hidden_dim(), enc.output_dim());
            let scale = 2.0 / chunk.len() as f64;
            for &i in chunk {
                let hidden = enc.hidden(&inputs[i]);
                let embed = enc.output_layer(&hidden);
                let d: Vec<f64> = embed.iter().zip(&model.center).map(|(e, c)| scale * (e - c)).collect();
                enc.backward(&inputs[i], &hidden, &d, &mut grads);
            }
            grads.b2.iter_mut().for_each(|g| *g = 0.0);
            opt.step(&mut model.encoder.tensors_mut(), &grads.tensors());
        }
        if !model.encoder.is_finite() {
            return Err(Error::Divergence { episodes: 0 });
        }
    }
    Ok(model)
}

/// Negated squared distance to the center: 0 at the center, lower farther out.
pub fn svdd_score(model: &SvddModel, bundle: &FeatureBundle) -> f64 {
    -model.squared_distance(&model.selector.extract(bundle))
}

/// A ready-to-use confidence function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "measure", rename_all = "snake_case")]
pub enum Scorer {
    Logit { kind: MeasureKind },
    Svdd { model: Box<SvddModel> },
}

impl Scorer {
    pub fn logit(kind: MeasureKind) -> Result<Self> {
        if kind == MeasureKind::Svdd {
            return Err(Error::Config("svdd scoring requires a trained model".into()));
        }
        Ok(Scorer::Logit { kind })
    }

    pub fn kind(&self) -> MeasureKind {
        match self {
            Scorer::Logit { kind } => *kind,
            Scorer::Svdd { .. } => MeasureKind::Svdd,
        }
    }

    pub fn score(&self, bundle: &FeatureBundle) -> f64 {
        match self {
            Scorer::Logit { kind } => score(*kind, bundle).expect("logit scorer holds a logit measure"),
            Scorer::Svdd { model } => svdd_score(model, bundle),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bundle_from_logits(z: &[f64]) -> FeatureBundle {
        FeatureBundle {
            obs: vec![],
            hidden: vec![],
            dist: nn::softmax(z),
            logits: z.to_vec(),
        }
    }

    #[test]
    fn one_hot_distribution() {
        let b = FeatureBundle {
            obs: vec![],
            hidden: vec![],
            dist: vec![0.0, 1.0, 0.0, 0.0],
            logits: vec![0.0; 4],
        };
        assert_eq!(score(MeasureKind::MaxProb, &b).unwrap(), 1.0);
        assert_eq!(score(MeasureKind::Margin, &b).unwrap(), 1.0);
        assert_eq!(score(MeasureKind::NegEntropy, &b).unwrap(), 0.0);
    }

    #[test]
    fn uniform_distribution() {
        let b = bundle_from_logits(&[0.0; 4]);
        assert_eq!(score(MeasureKind::MaxProb, &b).unwrap(), 0.25);
        assert_eq!(score(MeasureKind::Margin, &b).unwrap(), 0.0);
        let h = score(MeasureKind::NegEntropy, &b).unwrap();
        assert!((h + 4f64.ln()).abs() < 1e-12);
        assert!((h + 1.3863).abs() < 1e-4);
    }

    #[test]
    fn logit_scores_of_one_to_four() {
        let b = bundle_from_logits(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(score(MeasureKind::MaxLogit, &b).unwrap(), 4.0);
        let naive = (1f64.exp() + 2f64.exp() + 3f64.exp() + 4f64.exp()).ln();
        let e = score(MeasureKind::NegEnergy, &b).unwrap();
        assert!((e - naive).abs() < 1e-12);
        assert!((e - 4.4402).abs() < 1e-4);
        assert!(score(MeasureKind::Svdd, &b).is_err());
    }

    #[test]
    fn measure_names_parse() {
        for m in MeasureKind::ALL {
            assert_eq!(m.name().parse::<MeasureKind>().unwrap(), m);
        }
        assert_eq!("maxprob".parse::<MeasureKind>().unwrap(), MeasureKind::MaxProb);
        assert!("entropy".parse::<MeasureKind>().is_err());
    }

    #[test]
    fn seven_selectors() {
        let all = FeatureSelector::all();
        assert_eq!(all.len(), 7);
        for s in &all {
            assert_eq!(&s.to_string().parse::<FeatureSelector>().unwrap(), s);
        }
        assert!("".parse::<FeatureSelector>().is_err());
    }

    fn synthetic_bundles(n: usize, seed_: u64, offset: f64) -> Vec<FeatureBundle> {
        use rand::Rng as _;
        let mut rng = seed::rng(seed_);
        (0..n)
            .map(|_| FeatureBundle {
                obs: vec![],
                hidden: (0..8).map(|_| offset + rng.random_range(0.0..1.0)).collect(),
                dist: vec![0.25; 4],
                logits: vec![0.0; 4],
            })
            .collect()
    }

    #[test]
    fn repeated_input_collapses_to_center() {
        let one = synthetic_bundles(1, 3, 0.0).remove(0);
        let data = vec![one.clone(); 120];
        let cfg = SvddConfig {
            epochs: 200,
            ..SvddConfig::default()
        };
        let model = train_svdd(&data, FeatureSelector::HIDDEN, &cfg, 5).unwrap();
        let init_model = train_svdd(
            &data,
            FeatureSelector::HIDDEN,
            &SvddConfig {
                epochs: 0,
                ..cfg.clone()
            },
            5,
        )
        .unwrap();
        let before = -svdd_score(&init_model, &one);
        let after = -svdd_score(&model, &one);
        assert!(after < 1e-3, "distance {after} (before {before})");
    }

    #[test]
    fn svdd_is_deterministic_and_separates_shifted_inputs() {
        let train = synthetic_bundles(300, 1, 0.0);
        let cfg = SvddConfig::default();
        let a = train_svdd(&train, FeatureSelector::HIDDEN, &cfg, 9).unwrap();
        let b = train_svdd(&train, FeatureSelector::HIDDEN, &cfg, 9).unwrap();
        assert_eq!(a, b);
        let held_in = synthetic_bundles(200, 2, 0.0);
        let shifted = synthetic_bundles(200, 3, 2.0);
        let mean = |v: &[FeatureBundle]| v.iter().map(|x| -svdd_score(&a, x)).sum::<f64>() / v.len() as f64;
        assert!(mean(&held_in) < mean(&shifted));
    }

    #[test]
    fn svdd_needs_enough_samples() {
        let data = synthetic_bundles(50, 1, 0.0);
        assert!(train_svdd(&data, FeatureSelector::HIDDEN, &SvddConfig::default(), 0).is_err());
    }

    #[test]
    fn svdd_score_is_negated_squared_distance() {
        let mut model = SvddModel {
            encoder: PolicyParams::zeros(2, 2, 2),
            center: vec![0.0, 0.0],
            selector: FeatureSelector::HIDDEN,
        };
        let b = FeatureBundle {
            obs: vec![],
            hidden: vec![1.0, 1.0],
            dist: vec![],
            logits: vec![],
        };
        assert_eq!(svdd_score(&model, &b), 0.0);
        // enc(x) = (0, 0); center at distance 2.
        model.center = vec![2.0, 0.0];
        assert_eq!(svdd_score(&model, &b), -4.0);
        model.center = vec![3.0, 0.0];
        assert!(svdd_score(&model, &b) < -4.0);
    }

    #[test]
    fn svdd_json_roundtrip() {
        let data = synthetic_bundles(120, 1, 0.0);
        let cfg = SvddConfig {
            epochs: 2,
            ..SvddConfig::default()
        };
        let model = train_svdd(&data, FeatureSelector::HIDDEN, &cfg, 1).unwrap();
        let back = SvddModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(model, back);
    }

    proptest! {
        #[test]
        fn shift_invariance_and_bounds(z in proptest::collection::vec(-30.0f64..30.0, 4), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let (a, b) = (bundle_from_logits(&z), bundle_from_logits(&shifted));
            for m in [MeasureKind::MaxProb, MeasureKind::Margin, MeasureKind::NegEntropy] {
                prop_assert!((score(m, &a).unwrap() - score(m, &b).unwrap()).abs() <= 1e-9);
            }
            for m in [MeasureKind::MaxLogit, MeasureKind::NegEnergy] {
                prop_assert!((score(m, &b).unwrap() - score(m, &a).unwrap() - c).abs() <= 1e-9);
            }
            let mp = score(MeasureKind::MaxProb, &a).unwrap();
            let mg = score(MeasureKind::Margin, &a).unwrap();
            let ne = score(MeasureKind::NegEntropy, &a).unwrap();
            prop_assert!(mp > 0.0 && mp <= 1.0);
            prop_assert!((0.0..=1.0).contains(&mg) && mg <= mp);
            prop_assert!(ne >= -(4f64.ln()) - 1e-12 && ne <= 0.0);
            prop_assert!(score(MeasureKind::NegEnergy, &a).unwrap() >= score(MeasureKind::MaxLogit, &a).unwrap());
        }
    }
}
