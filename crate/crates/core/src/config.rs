//! Flat `key = value` config files.
//!
//! Lines are `key = value`, `# comment` or blank. A `[stage2]` header starts
//! the second-stage section, which begins as a copy of the first stage and
//! overrides only the keys it lists. Unknown keys and malformed values are
//! reported together, each with its line number.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::datagen::{GeneratorSpec, Nonlinearity};
use crate::error::{CirError, Result};
use crate::interference::{InterferenceMode, NoiseConfig};
use crate::losses::{Reduction, TripletDistance};
use crate::nn::Activation;
use crate::trainer::{LossMode, TrainConfig, TripletSource};

/// A training config plus how the dataset is split into class-disjoint parts.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub split_fractions: (f64, f64, f64),
    pub split_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            split_fractions: (0.6, 0.2, 0.2),
            split_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let (a, b, c) = self.split_fractions;
        if [a, b, c].iter().any(|f| !(*f > 0.0 && *f <= 1.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(crate::error::config_err(format!(
                "split fractions must be positive and sum to 1, got {a}, {b}, {c}"
            )));
        }
        Ok(())
    }

    /// Every setting, defaults included, in the format [`parse_run_config`] reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let (a, b, c) = self.split_fractions;
        let _ = writeln!(out, "split_train = {a}\nsplit_val = {b}\nsplit_test = {c}\nsplit_seed = {}", self.split_seed);
        write_train(&mut out, &self.train);
        if let Some(stage2) = &self.train.stage2 {
            out.push_str("\n[stage2]\n");
            write_train(&mut out, stage2);
        }
        out
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_train(out: &mut String, t: &TrainConfig) {
    let noise = match &t.noise {
        None => "none",
        Some(n) if n.norm_matched => "norm_matched",
        Some(_) => "fixed",
    };
    let sigma = t.noise.map_or(0.0, |n| n.sigma);
    let lines: Vec<(&str, String)> = vec![
        ("loss_mode", t.loss_mode.name().into()),
        ("hidden", join(&t.hidden)),
        ("embedding_dim", t.embedding_dim.to_string()),
        ("activation", t.activation.name().into()),
        ("interference", t.interference.enabled.to_string()),
        ("lambda", t.interference.lambda.to_string()),
        ("interference_mode", t.interference.mode.name().into()),
        ("noise", noise.into()),
        ("noise_sigma", sigma.to_string()),
        ("gamma", t.gamma.to_string()),
        ("tac_normalize", t.tac_normalize.to_string()),
        ("margin", t.triplet.margin.to_string()),
        ("reduction", t.triplet.reduction.name().into()),
        ("triplet_distance", t.triplet.distance.name().into()),
        ("triplet_source", t.triplet_source.name().into()),
        ("pk_classes", t.pk.classes.to_string()),
        ("pk_samples", t.pk.per_class.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("temperature", t.temperature.to_string()),
        ("label_smoothing", t.label_smoothing.to_string()),
        ("lr", t.lr.to_string()),
        ("lr_decay_start", t.lr_decay_start.to_string()),
        ("lr_decay_factor", t.lr_decay_factor.to_string()),
        ("epochs", t.epochs.to_string()),
        ("iters_per_epoch", t.iters_per_epoch.to_string()),
        ("seed", t.seed.to_string()),
        ("monitor_way", t.monitor.way.to_string()),
        ("monitor_shot", t.monitor.shot.to_string()),
        ("monitor_queries", t.monitor.queries.to_string()),
        ("monitor_episodes", t.monitor.episodes.to_string()),
    ];
    for (k, v) in lines {
        let _ = writeln!(out, "{k} = {v}");
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn named<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| match e {
        CirError::Config(m) => m,
        other => other.to_string(),
    })
}

fn usize_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| num(p.trim())).collect()
}

/// Noise kind and sigma are separate keys, so they are held until the end.
#[derive(Default, Clone, Copy)]
struct NoiseKeys {
    kind: Option<u8>,
    sigma: Option<f64>,
}

fn set_train_key(t: &mut TrainConfig, noise: &mut NoiseKeys, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "loss_mode" => t.loss_mode = named(LossMode::parse(v))?,
        "hidden" => t.hidden = usize_list(v)?,
        "embedding_dim" => t.embedding_dim = num(v)?,
        "activation" => t.activation = named(Activation::parse(v))?,
        "interference" => t.interference.enabled = boolean(v)?,
        "lambda" => t.interference.lambda = num(v)?,
        "interference_mode" => t.interference.mode = named(InterferenceMode::parse(v))?,
        "noise" => {
            noise.kind = Some(match v {
                "none" => 0,
                "fixed" => 1,
                "norm_matched" => 2,
                _ => return Err(format!("noise must be none, fixed or norm_matched, got `{v}`")),
            })
        }
        "noise_sigma" => noise.sigma = Some(num(v)?),
        "gamma" => t.gamma = num(v)?,
        "tac_normalize" => t.tac_normalize = boolean(v)?,
        "margin" => t.triplet.margin = num(v)?,
        "reduction" => t.triplet.reduction = named(Reduction::parse(v))?,
        "triplet_distance" => t.triplet.distance = named(TripletDistance::parse(v))?,
        "triplet_source" => t.triplet_source = named(TripletSource::parse(v))?,
        "pk_classes" => t.pk.classes = num(v)?,
        "pk_samples" => t.pk.per_class = num(v)?,
        "batch_size" => t.batch_size = num(v)?,
        "temperature" => t.temperature = num(v)?,
        "label_smoothing" => t.label_smoothing = num(v)?,
        "lr" => t.lr = num(v)?,
        "lr_decay_start" => t.lr_decay_start = num(v)?,
        "lr_decay_factor" => t.lr_decay_factor = num(v)?,
        "epochs" => t.epochs = num(v)?,
        "iters_per_epoch" => t.iters_per_epoch = num(v)?,
        "seed" => t.seed = num(v)?,
        "monitor_way" => t.monitor.way = num(v)?,
        "monitor_shot" => t.monitor.shot = num(v)?,
        "monitor_queries" => t.monitor.queries = num(v)?,
        "monitor_episodes" => t.monitor.episodes = num(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn resolve_noise(t: &mut TrainConfig, keys: NoiseKeys) {
    let sigma = keys.sigma.or(t.noise.map(|n| n.sigma)).unwrap_or(0.0);
    let kind = keys.kind.unwrap_or(match t.noise {
        None => 0,
        Some(n) if n.norm_matched => 2,
        Some(_) => 1,
    });
    t.noise = match kind {
        0 => None,
        k => Some(NoiseConfig {
            sigma,
            norm_matched: k == 2,
        }),
    };
}

/// Split a line into `(key, value)`, or `None` for blank and comment lines.
fn split_line(raw: &str) -> Option<std::result::Result<(&str, &str), String>> {
    let line = raw.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return None;
    }
    Some(match line.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => Err(format!("expected `key = value`, got `{line}`")),
    })
}

fn fail(errors: Vec<String>) -> CirError {
    CirError::Config(errors.join("; "))
}

/// Parse a run config. Keys not given keep their defaults.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut stage2: Option<(TrainConfig, NoiseKeys)> = None;
    let mut noise1 = NoiseKeys::default();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let trimmed = raw.split('#').next().unwrap_or("").trim();
        if trimmed.starts_with('[') {
            if trimmed == "[stage2]" && stage2.is_none() {
                let mut base = cfg.train.clone();
                resolve_noise(&mut base, noise1);
                stage2 = Some((base, NoiseKeys::default()));
            } else {
                errors.push(format!("line {n}: unexpected section `{trimmed}`"));
            }
            continue;
        }
        let (key, value) = match split_line(raw) {
            None => continue,
            Some(Ok(kv)) => kv,
            Some(Err(e)) => {
                errors.push(format!("line {n}: {e}"));
                continue;
            }
        };
        let result = match stage2.as_mut() {
            Some((t, nk)) => set_train_key(t, nk, key, value),
            None => match key {
                "split_train" => num(value).map(|v| cfg.split_fractions.0 = v).map(|_| true),
                "split_val" => num(value).map(|v| cfg.split_fractions.1 = v).map(|_| true),
                "split_test" => num(value).map(|v| cfg.split_fractions.2 = v).map(|_| true),
                "split_seed" => num(value).map(|v| cfg.split_seed = v).map(|_| true),
                _ => set_train_key(&mut cfg.train, &mut noise1, key, value),
            },
        };
        match result {
            Ok(true) => {}
            Ok(false) => errors.push(format!("line {n}: unknown key `{key}`")),
            Err(e) => errors.push(format!("line {n}: {key}: {e}")),
        }
    }
    if !errors.is_empty() {
        return Err(fail(errors));
    }
    resolve_noise(&mut cfg.train, noise1);
    if let Some((mut t, nk)) = stage2 {
        resolve_noise(&mut t, nk);
        cfg.train.stage2 = Some(Box::new(t));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a generator spec written by [`GeneratorSpec::to_text`]. Every key is
/// required.
pub fn parse_generator_spec(text: &str) -> Result<GeneratorSpec> {
    let mut spec = GeneratorSpec::reproduce(0);
    let mut seen = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let (key, v) = match split_line(raw) {
            None => continue,
            Some(Ok(kv)) => kv,
            Some(Err(e)) => {
                errors.push(format!("line {n}: {e}"));
                continue;
            }
        };
        let r: std::result::Result<(), String> = match key {
            "classes" => num(v).map(|x| spec.classes = x),
            "per_class" => num(v).map(|x| spec.per_class = x),
            "dim" => num(v).map(|x| spec.dim = x),
            "spread" => num(v).map(|x| spec.spread = x),
            "center_scale" => num(v).map(|x| spec.center_scale = x),
            "nonlinearity" => named(Nonlinearity::parse(v)).map(|x| spec.nonlinearity = x),
            "label_noise" => num(v).map(|x| spec.label_noise = x),
            "seed" => num(v).map(|x| spec.seed = x),
            _ => Err(format!("unknown key `{key}`")),
        };
        match r {
            Ok(()) => seen.push(key.to_string()),
            Err(e) => errors.push(format!("line {n}: {e}")),
        }
    }
    for key in ["classes", "per_class", "dim", "spread", "center_scale", "nonlinearity", "label_noise", "seed"] {
        if !seen.iter().any(|s| s == key) {
            errors.push(format!("missing key `{key}`"));
        }
    }
    if !errors.is_empty() {
        return Err(fail(errors));
    }
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(parse_run_config(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = parse_run_config("# few-shot\nlambda = 0.5  # blend\ngamma = 0.5\ninterference = true\nhidden = 32,16\n").unwrap();
        assert!(cfg.train.interference.enabled);
        assert_eq!(cfg.train.hidden, vec![32, 16]);
        assert_eq!(cfg.train.interference.lambda, 0.5);
    }

    #[test]
    fn errors_cite_lines() {
        let err = parse_run_config("lambda = 0.5\nbogus = 1\nepochs = x\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("bogus"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn lambda_out_of_range() {
        assert!(matches!(parse_run_config("lambda = 1.5\n"), Err(CirError::Config(_))));
    }

    #[test]
    fn noise_and_interference_exclusive() {
        assert!(parse_run_config("interference = true\nnoise = fixed\nnoise_sigma = 0.1\n").is_err());
        let cfg = parse_run_config("noise = fixed\nnoise_sigma = 0.1\n").unwrap();
        assert_eq!(
            cfg.train.noise,
            Some(NoiseConfig {
                sigma: 0.1,
                norm_matched: false
            })
        );
    }

    #[test]
    fn stage2_inherits_and_round_trips() {
        let text = "loss_mode = cross_entropy\nbatch_size = 32\nepochs = 3\n[stage2]\nloss_mode = triplet\ninterference = true\n";
        let cfg = parse_run_config(text).unwrap();
        let s2 = cfg.train.stage2.as_deref().unwrap();
        assert_eq!(s2.loss_mode, LossMode::Triplet);
        assert_eq!(s2.epochs, 3);
        assert!(s2.interference.enabled && !cfg.train.interference.enabled);
        assert_eq!(parse_run_config(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn split_keys_only_in_first_section() {
        assert!(parse_run_config("[stage2]\nsplit_seed = 3\n").is_err());
        assert!(parse_run_config("[stage3]\n").is_err());
    }

    #[test]
    fn generator_spec_round_trip() {
        let spec = GeneratorSpec::reproduce(7);
        assert_eq!(parse_generator_spec(&spec.to_text()).unwrap(), spec);
        assert!(parse_generator_spec("classes = 3\n").is_err());
    }
}
