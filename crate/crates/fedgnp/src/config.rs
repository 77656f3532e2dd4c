//! JSON experiment configuration.
//!
//! Scalar and list forms of the sweep axes are both accepted (`alpha` or
//! `alphas`, `mask` or `masks`, `gnp` or `gnp_flags`, `seed` or `seeds`);
//! giving both forms of one axis is an error. Unknown keys are rejected and
//! every error names the offending key path.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedgnp_core::datagen::{benchmark_shifts, GeneratorConfig, ShiftSpec};
use fedgnp_core::federation::{FedConfig, ProjectionScope};
use fedgnp_core::model::PeftMask;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{HarnessError, Result};

/// Benchmark geometry not exposed as configuration keys.
pub const CLASS_SEP: f64 = 3.0;
pub const NOISE_STD: f64 = 1.0;

/// Largest number of shifted test sets the summary table has columns for.
pub const MAX_SHIFTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub dim: usize,
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub shifts: Vec<ShiftSpec>,
}

impl DataSpec {
    pub fn generator(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            n_train: self.n_train,
            n_test: self.n_test,
            dim: self.dim,
            classes: self.classes,
            class_sep: CLASS_SEP,
            noise_std: NOISE_STD,
            shifts: self.shifts.clone(),
        }
    }
}

/// A base run configuration plus the axes of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// `alpha`, `mask`, `gnp_enabled` and `seed` are overridden per cell.
    pub base: FedConfig,
    pub data: DataSpec,
    pub alphas: Vec<f64>,
    pub masks: Vec<PeftMask>,
    pub gnp_flags: Vec<bool>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base: FedConfig::default(),
            data: DataSpec {
                dim: 32,
                classes: 3,
                n_train: 3000,
                n_test: 1000,
                shifts: benchmark_shifts(32, 3),
            },
            alphas: vec![0.1, 1.0, 10.0],
            masks: vec![PeftMask::Full],
            gnp_flags: vec![false, true],
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentSpec {
    pub fn num_cells(&self) -> usize {
        self.alphas.len() * self.masks.len() * self.gnp_flags.len() * self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(HarnessError::Config(format!("{key}: {msg}")));
        let b = &self.base;
        if b.clients == 0 {
            return fail("K", "must be at least 1".into());
        }
        if b.rounds == 0 {
            return fail("T", "must be at least 1".into());
        }
        if b.local_epochs == 0 {
            return fail("E", "must be at least 1".into());
        }
        if b.steps_per_epoch == 0 {
            return fail("steps_per_epoch", "must be at least 1".into());
        }
        if !(b.eta > 0.0 && b.eta.is_finite()) {
            return fail("eta", format!("learning rate must be positive, got {}", b.eta));
        }
        if !(b.sample_rate > 0.0 && b.sample_rate <= 1.0) {
            return fail("c", format!("sampling rate must be in (0,1], got {}", b.sample_rate));
        }
        if !(b.tau >= 0.0 && b.tau.is_finite()) {
            return fail("tau", format!("must be nonnegative, got {}", b.tau));
        }
        if !(b.gamma_max >= 0.0 && b.gamma_max.is_finite()) {
            return fail("gamma_max", format!("must be nonnegative, got {}", b.gamma_max));
        }
        if b.hidden == 0 {
            return fail("h", "must be at least 1".into());
        }
        let d = &self.data;
        if d.dim < 2 {
            return fail("d", format!("must be at least 2, got {}", d.dim));
        }
        if d.classes < 2 {
            return fail("C", format!("must be at least 2, got {}", d.classes));
        }
        if d.n_train < b.clients.max(d.classes) {
            return fail(
                "n_train",
                format!("must be at least max(K, C) = {}", b.clients.max(d.classes)),
            );
        }
        if d.n_test == 0 {
            return fail("n_test", "must be at least 1".into());
        }
        if d.shifts.len() > MAX_SHIFTS {
            return fail("shifts", format!("at most {MAX_SHIFTS} shifts supported"));
        }
        for (i, s) in d.shifts.iter().enumerate() {
            if let Err(e) = s.validate(d.dim, d.classes) {
                return fail(&format!("shifts[{i}]"), e.to_string());
            }
        }
        for (key, empty) in [
            ("alphas", self.alphas.is_empty()),
            ("masks", self.masks.is_empty()),
            ("gnp_flags", self.gnp_flags.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return fail(key, "sweep axis must not be empty".into());
            }
        }
        if let Some((i, a)) = self.alphas.iter().enumerate().find(|(_, a)| !(**a > 0.0)) {
            return fail(&format!("alphas[{i}]"), format!("must be positive, got {a}"));
        }
        Ok(())
    }

    /// Run configuration of one sweep cell.
    pub fn cell_config(&self, alpha: f64, mask: PeftMask, gnp: bool, seed: u64) -> FedConfig {
        FedConfig {
            alpha,
            mask,
            gnp_enabled: gnp,
            seed,
            ..self.base.clone()
        }
    }

    pub fn to_json(&self) -> String {
        let raw = RawConfig::from_spec(self);
        let mut s = serde_json::to_string_pretty(&raw).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(HarnessError::io(path))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            HarnessError::Config(inner.to_string())
        } else {
            HarnessError::Config(format!("{path}: {inner}"))
        }
    })?;
    let spec = raw.into_spec()?;
    spec.validate()?;
    Ok(spec)
}

/// Mask names as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq)]
struct MaskName(PeftMask);

impl Serialize for MaskName {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for MaskName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PeftMask::from_str(&s)
            .map(MaskName)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScopeName {
    Global,
    PerTensor,
}

impl From<ScopeName> for ProjectionScope {
    fn from(s: ScopeName) -> Self {
        match s {
            ScopeName::Global => ProjectionScope::Global,
            ScopeName::PerTensor => ProjectionScope::PerTensor,
        }
    }
}

impl From<ProjectionScope> for ScopeName {
    fn from(s: ProjectionScope) -> Self {
        match s {
            ProjectionScope::Global => ScopeName::Global,
            ProjectionScope::PerTensor => ScopeName::PerTensor,
        }
    }
}

impl fmt::Display for ScopeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScopeName::Global => "global",
            ScopeName::PerTensor => "per_tensor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftJson {
    pub rotation_angle: f64,
    pub mean_shift: Vec<f64>,
    pub label_prior: Vec<f64>,
    pub noise_scale: f64,
}

impl From<ShiftJson> for ShiftSpec {
    fn from(s: ShiftJson) -> Self {
        ShiftSpec {
            rotation_angle: s.rotation_angle,
            mean_shift: s.mean_shift,
            label_prior: s.label_prior,
            noise_scale: s.noise_scale,
        }
    }
}

impl From<&ShiftSpec> for ShiftJson {
    fn from(s: &ShiftSpec) -> Self {
        ShiftJson {
            rotation_angle: s.rotation_angle,
            mean_shift: s.mean_shift.clone(),
            label_prior: s.label_prior.clone(),
            noise_scale: s.noise_scale,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    clients: Option<usize>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    rounds: Option<usize>,
    #[serde(rename = "E", skip_serializing_if = "Option::is_none")]
    local_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alphas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    indicator_period: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<MaskName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    masks: Option<Vec<MaskName>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gnp: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gnp_flags: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_enabled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    projection_scope: Option<ScopeName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps_per_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<usize>,
    #[serde(rename = "C", skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_test: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shifts: Option<Vec<ShiftJson>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
}

fn axis<T>(single: Option<T>, list: Option<Vec<T>>, keys: (&str, &str)) -> Result<Option<Vec<T>>> {
    match (single, list) {
        (Some(_), Some(_)) => Err(HarnessError::Config(format!(
            "{}: conflicts with `{}`; give one of them",
            keys.0, keys.1
        ))),
        (Some(v), None) => Ok(Some(vec![v])),
        (None, list) => Ok(list),
    }
}

impl RawConfig {
    fn into_spec(self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::default();
        let b = &mut spec.base;
        b.clients = self.clients.unwrap_or(b.clients);
        b.rounds = self.rounds.unwrap_or(b.rounds);
        b.local_epochs = self.local_epochs.unwrap_or(b.local_epochs);
        b.eta = self.eta.unwrap_or(b.eta);
        b.sample_rate = self.c.unwrap_or(b.sample_rate);
        b.tau = self.tau.unwrap_or(b.tau);
        b.gamma_max = self.gamma_max.unwrap_or(b.gamma_max);
        b.indicator_period = self.indicator_period.unwrap_or(b.indicator_period);
        b.noise_enabled = self.noise_enabled.unwrap_or(b.noise_enabled);
        if let Some(s) = self.projection_scope {
            b.projection_scope = s.into();
        }
        b.steps_per_epoch = self.steps_per_epoch.unwrap_or(b.steps_per_epoch);
        b.hidden = self.h.unwrap_or(b.hidden);

        let dim = self.d.unwrap_or(spec.data.dim);
        let classes = self.classes.unwrap_or(spec.data.classes);
        spec.data = DataSpec {
            dim,
            classes,
            n_train: self.n_train.unwrap_or(spec.data.n_train),
            n_test: self.n_test.unwrap_or(spec.data.n_test),
            shifts: match self.shifts {
                Some(list) => list.into_iter().map(ShiftSpec::from).collect(),
                None => benchmark_shifts(dim, classes),
            },
        };

        if let Some(a) = axis(self.alpha, self.alphas, ("alpha", "alphas"))? {
            spec.alphas = a;
        }
        if let Some(m) = axis(self.mask, self.masks, ("mask", "masks"))? {
            spec.masks = m.into_iter().map(|m| m.0).collect();
        }
        if let Some(g) = axis(self.gnp, self.gnp_flags, ("gnp", "gnp_flags"))? {
            spec.gnp_flags = g;
        }
        if let Some(s) = axis(self.seed, self.seeds, ("seed", "seeds"))? {
            spec.seeds = s;
        }
        if let Some(dir) = self.out_dir {
            spec.out_dir = dir;
        }
        Ok(spec)
    }

    /// Fully explicit form; the list keys carry the sweep axes.
    fn from_spec(spec: &ExperimentSpec) -> Self {
        let b = &spec.base;
        RawConfig {
            clients: Some(b.clients),
            rounds: Some(b.rounds),
            local_epochs: Some(b.local_epochs),
            eta: Some(b.eta),
            c: Some(b.sample_rate),
            alphas: Some(spec.alphas.clone()),
            tau: Some(b.tau),
            gamma_max: Some(b.gamma_max),
            indicator_period: Some(b.indicator_period),
            masks: Some(spec.masks.iter().copied().map(MaskName).collect()),
            gnp_flags: Some(spec.gnp_flags.clone()),
            noise_enabled: Some(b.noise_enabled),
            projection_scope: Some(b.projection_scope.into()),
            steps_per_epoch: Some(b.steps_per_epoch),
            d: Some(spec.data.dim),
            h: Some(b.hidden),
            classes: Some(spec.data.classes),
            n_train: Some(spec.data.n_train),
            n_test: Some(spec.data.n_test),
            shifts: Some(spec.data.shifts.iter().map(ShiftJson::from).collect()),
            seeds: Some(spec.seeds.clone()),
            out_dir: Some(spec.out_dir.clone()),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let spec =
            parse_config(r#"{"K":10,"T":30,"E":1,"eta":0.05,"c":0.5,"alpha":1.0,"seed":1}"#)
                .unwrap();
        assert_eq!(spec.base.tau, 20.0);
        assert_eq!(spec.base.indicator_period, 10);
        assert_eq!(spec.base.gamma_max, 1.0);
        assert_eq!(spec.base.rounds, 30);
        assert_eq!(spec.alphas, vec![1.0]);
        assert_eq!(spec.seeds, vec![1]);
        assert_eq!(spec.data.shifts.len(), 3);
    }

    #[test]
    fn zero_sampling_rate_rejected() {
        let err = parse_config(r#"{"c":0}"#).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("c: sampling rate"), "{err}");
    }

    #[test]
    fn unknown_and_conflicting_keys_rejected() {
        let err = parse_config(r#"{"K":3,"lr":0.1}"#).unwrap_err().to_string();
        assert!(err.contains("unknown field `lr`"), "{err}");
        let err = parse_config(r#"{"alpha":1.0,"alphas":[1.0]}"#).unwrap_err().to_string();
        assert!(err.contains("alpha: conflicts"), "{err}");
    }

    #[test]
    fn errors_are_path_qualified() {
        let err = parse_config(r#"{"masks":["full","lora"]}"#).unwrap_err().to_string();
        assert!(err.contains("masks[1]"), "{err}");
        let bad_shift = r#"{"d":2,"C":2,"shifts":[{"rotation_angle":0,"mean_shift":[0,0],"label_prior":[0.5,0.5],"noise_scale":1,"x":1}]}"#;
        let err = parse_config(bad_shift).unwrap_err().to_string();
        assert!(err.contains("shifts[0]"), "{err}");
        let err = parse_config(r#"{"T":"ten"}"#).unwrap_err().to_string();
        assert!(err.contains("T:"), "{err}");
        let err = parse_config("{").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn save_and_load_round_trip() {
        let mut spec = ExperimentSpec::default();
        spec.masks = vec![PeftMask::LowRank(4), PeftMask::Bottleneck(16)];
        spec.base.projection_scope = ProjectionScope::PerTensor;
        spec.base.eta = 0.123_456_789_012_345_67;
        let back = parse_config(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
    }
}
