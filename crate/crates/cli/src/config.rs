//! Flat `key = value` run configuration.
//!
//! Settings are collected as explicit key/value pairs (config file first,
//! then command-line overrides, later ones winning) and resolved against the
//! built-in defaults in one place, so `imagenet_mode` can change several
//! defaults without clobbering keys the user set explicitly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use cadavae::alignment::Variant;
use cadavae::classifier::{EvalConfig, SoftmaxHyper};
use cadavae::latent::SamplingPlan;
use cadavae::trainer::TrainConfig;

/// One documented configuration key.
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const SCHEMA: &[KeySpec] = &[
    KeySpec { key: "seed", default: "0", help: "seed for initialization, batching, sampling and the classifier" },
    KeySpec { key: "variant", default: "cada", help: "vae | da | ca | cada" },
    KeySpec { key: "imagenet_mode", default: "false", help: "latent 128, two hidden layers per network, batch 128" },
    KeySpec { key: "epochs", default: "100", help: "VAE training epochs" },
    KeySpec { key: "batch_size", default: "50", help: "VAE batch size (128 in imagenet_mode)" },
    KeySpec { key: "vae_learning_rate", default: "0.00015", help: "Adam learning rate for all VAEs" },
    KeySpec { key: "latent_dim", default: "64", help: "shared latent size (128 in imagenet_mode)" },
    KeySpec { key: "image_encoder_hidden", default: "1560", help: "comma-separated hidden widths" },
    KeySpec { key: "image_decoder_hidden", default: "1660", help: "comma-separated hidden widths" },
    KeySpec { key: "aux_encoder_hidden", default: "1450", help: "side-information encoder hidden widths" },
    KeySpec { key: "aux_decoder_hidden", default: "660", help: "side-information decoder hidden widths" },
    KeySpec { key: "beta_start", default: "0", help: "KL weight warm-up start epoch" },
    KeySpec { key: "beta_end", default: "90", help: "KL weight warm-up end epoch" },
    KeySpec { key: "beta_rate", default: "0.0026", help: "KL weight increase per epoch" },
    KeySpec { key: "gamma_start", default: "21", help: "cross-alignment warm-up start epoch" },
    KeySpec { key: "gamma_end", default: "75", help: "cross-alignment warm-up end epoch" },
    KeySpec { key: "gamma_rate", default: "0.044", help: "cross-alignment weight increase per epoch" },
    KeySpec { key: "delta_start", default: "6", help: "distribution-alignment warm-up start epoch" },
    KeySpec { key: "delta_end", default: "22", help: "distribution-alignment warm-up end epoch" },
    KeySpec { key: "delta_rate", default: "0.54", help: "distribution-alignment weight increase per epoch" },
    KeySpec { key: "x_s", default: "0", help: "percent of seen classes paired with sentences" },
    KeySpec { key: "x_u", default: "0", help: "percent of unseen classes paired with sentences" },
    KeySpec { key: "per_seen_class", default: "200", help: "latent samples per seen class" },
    KeySpec { key: "per_unseen_class", default: "400", help: "latent samples per unseen class" },
    KeySpec { key: "dynamic", default: "false", help: "resample latent features at every classifier step" },
    KeySpec { key: "shots", default: "0", help: "unseen-class image features released per class" },
    KeySpec { key: "cls_learning_rate", default: "0.001", help: "classifier Adam learning rate" },
    KeySpec { key: "cls_epochs", default: "100", help: "classifier epochs over a fixed latent set" },
    KeySpec { key: "cls_batch_size", default: "50", help: "classifier batch size" },
    KeySpec { key: "cls_iterations", default: "3000", help: "classifier steps on a dynamic stream" },
];

/// Explicitly set keys, in precedence order (later wins).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Everything the pipeline needs, resolved against the defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub seed: u64,
    pub variant: Variant,
    pub train: TrainConfig,
    pub x_s: f64,
    pub x_u: f64,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let key = key.trim();
        if !SCHEMA.iter().any(|k| k.key == key) {
            return Err(format!("unknown configuration key `{key}`"));
        }
        self.values.insert(key.to_owned(), value.trim().to_owned());
        Ok(())
    }

    /// Parses one `key=value` assignment.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), String> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{pair}`"))?;
        self.set(k, v)
    }

    /// Applies a config file: one `key = value` per line, `#` starts a
    /// comment, blank lines are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_text(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| format!("invalid value `{v}` for `{key}`")))
            .transpose()
    }

    fn widths(&self, key: &str) -> Result<Option<Vec<usize>>, String> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|w| w.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| format!("invalid width list `{v}` for `{key}`"))
            })
            .transpose()
    }

    pub fn resolve(&self) -> Result<Resolved, String> {
        let imagenet = self.parse::<bool>("imagenet_mode")?.unwrap_or(false);
        let mut train = if imagenet { TrainConfig::imagenet() } else { TrainConfig::default() };
        let seed = self.parse("seed")?.unwrap_or(0);
        let variant: Variant = match self.get("variant") {
            Some(v) => v.parse().map_err(|_| format!("invalid variant `{v}` (expected vae, da, ca or cada)"))?,
            None => Variant::Cada,
        };
        train.seed = seed;
        train.flags = variant.flags();
        macro_rules! maybe {
            ($field:expr, $key:literal) => {
                if let Some(v) = self.parse($key)? {
                    $field = v;
                }
            };
        }
        maybe!(train.epochs, "epochs");
        maybe!(train.batch_size, "batch_size");
        maybe!(train.learning_rate, "vae_learning_rate");
        maybe!(train.vae.latent_dim, "latent_dim");
        maybe!(train.schedules.beta.start_epoch, "beta_start");
        maybe!(train.schedules.beta.end_epoch, "beta_end");
        maybe!(train.schedules.beta.rate_per_epoch, "beta_rate");
        maybe!(train.schedules.gamma.start_epoch, "gamma_start");
        maybe!(train.schedules.gamma.end_epoch, "gamma_end");
        maybe!(train.schedules.gamma.rate_per_epoch, "gamma_rate");
        maybe!(train.schedules.delta.start_epoch, "delta_start");
        maybe!(train.schedules.delta.end_epoch, "delta_end");
        maybe!(train.schedules.delta.rate_per_epoch, "delta_rate");
        for (key, slot) in [
            ("image_encoder_hidden", &mut train.vae.image_encoder_hidden),
            ("image_decoder_hidden", &mut train.vae.image_decoder_hidden),
            ("aux_encoder_hidden", &mut train.vae.aux_encoder_hidden),
            ("aux_decoder_hidden", &mut train.vae.aux_decoder_hidden),
        ] {
            if let Some(w) = self.widths(key)? {
                *slot = w;
            }
        }
        train.validate().map_err(|e| e.to_string())?;

        let mut plan = SamplingPlan::default();
        maybe!(plan.per_seen_class, "per_seen_class");
        maybe!(plan.per_unseen_class, "per_unseen_class");
        maybe!(plan.dynamic, "dynamic");
        let mut hyper = SoftmaxHyper {
            seed,
            ..SoftmaxHyper::default()
        };
        maybe!(hyper.learning_rate, "cls_learning_rate");
        maybe!(hyper.epochs, "cls_epochs");
        maybe!(hyper.batch_size, "cls_batch_size");
        maybe!(hyper.dynamic_iterations, "cls_iterations");
        hyper.validate().map_err(|e| e.to_string())?;
        let mut shots = 0;
        maybe!(shots, "shots");
        let mut x_s = 0.0;
        let mut x_u = 0.0;
        maybe!(x_s, "x_s");
        maybe!(x_u, "x_u");
        Ok(Resolved {
            seed,
            variant,
            train,
            x_s,
            x_u,
            eval: EvalConfig { plan, hyper, shots, seed },
        })
    }

    /// Every key with its effective value, marking explicit settings.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for k in SCHEMA {
            match self.get(k.key) {
                Some(v) => {
                    let _ = writeln!(s, "{} = {v}  (set)", k.key);
                }
                None => {
                    let _ = writeln!(s, "{} = {}", k.key, k.default);
                }
            }
        }
        s
    }
}

/// Default configuration file contents, with help comments.
pub fn default_config_text() -> String {
    let mut s = String::new();
    for k in SCHEMA {
        let _ = writeln!(s, "# {}\n{} = {}", k.help, k.key, k.default);
    }
    s
}
