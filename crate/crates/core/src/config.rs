//! Flat `key = value` configuration shared by every subcommand.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are
//! rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::fnv1a;

macro_rules! config {
    ($( $(#[$doc:meta])* $key:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        #[allow(non_snake_case)]
        pub struct TrainingConfig {
            $( $(#[$doc])* pub $key: $ty, )*
        }

        impl Default for TrainingConfig {
            fn default() -> Self {
                TrainingConfig { $( $key: $default, )* }
            }
        }

        impl TrainingConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($key) ),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($key) => self.$key = parse_value(key, value)?, )*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// Canonical text form, one `key = value` line per key.
            pub fn render(&self) -> String {
                let mut out = String::new();
                $( let _ = writeln!(out, "{} = {}", stringify!($key), self.$key); )*
                out
            }
        }
    };
}

config! {
    seed: u64 = 1,
    /// Expansion terms per reformulation.
    K: usize = 3,
    /// Sampled reformulations per query and epoch.
    M: usize = 5,
    lr_reformulator: f64 = 1e-5,
    lr_pretrain: f64 = 1e-3,
    lr_finetune: f64 = 1e-4,
    /// Queries per policy update.
    batch_size: usize = 50,
    /// Document pairs per ranker update.
    ranker_batch: usize = 16,
    patience: usize = 10,
    max_epochs: usize = 50,
    pretrain_epochs: usize = 30,
    train_ranker_fre: usize = 10,
    freeze_ranker: bool = false,
    baseline_on: bool = true,
    without_replacement: bool = true,
    train_embeddings: bool = true,
    kernels: usize = 11,
    conv_layers: usize = 1,
    pool_size: usize = 10,
    prf_docs: usize = 3,
    know_top: usize = 10,
    rm_lambda: f64 = 0.5,
    threads: usize = 1,
    synth_queries: usize = 160,
    synth_train: usize = 100,
    synth_valid: usize = 30,
    synth_docs: usize = 500,
    synth_vocab: usize = 2000,
    synth_pairs: usize = 160,
    synth_dim: usize = 50,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainingConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order, then validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("K", self.K),
            ("M", self.M),
            ("batch_size", self.batch_size),
            ("ranker_batch", self.ranker_batch),
            ("train_ranker_fre", self.train_ranker_fre),
            ("kernels", self.kernels.saturating_sub(1)),
            ("conv_layers", self.conv_layers),
            ("pool_size", self.pool_size),
            ("threads", self.threads),
            ("synth_dim", self.synth_dim),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` is out of range")));
        }
        for (k, v) in [
            ("lr_reformulator", self.lr_reformulator),
            ("lr_pretrain", self.lr_pretrain),
            ("lr_finetune", self.lr_finetune),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("`{k}` must be a positive number")));
            }
        }
        if !(0.0..=1.0).contains(&self.rm_lambda) {
            return Err(Error::Config("`rm_lambda` must lie in [0, 1]".into()));
        }
        if self.synth_train + self.synth_valid > self.synth_queries {
            return Err(Error::Config("synth_train + synth_valid exceeds synth_queries".into()));
        }
        Ok(())
    }

    /// Hash of every key except `seed`.
    pub fn hash(&self) -> u64 {
        let text: String = self
            .render()
            .lines()
            .filter(|l| !l.starts_with("seed "))
            .map(|l| format!("{l}\n"))
            .collect();
        fnv1a(text.as_bytes())
    }

    pub fn run_dir_name(&self) -> String {
        format!("run-{:016x}-seed{}", self.hash(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = TrainingConfig::default();
        assert_eq!(TrainingConfig::parse(&c.render()).unwrap(), c);
        assert_eq!(c.K, 3);
        assert_eq!(c.M, 5);
        assert_eq!(c.train_ranker_fre, 10);
    }

    #[test]
    fn parse_and_override() {
        let mut c = TrainingConfig::parse("# comment\nK = 2\n\nfreeze_ranker = true\n").unwrap();
        assert_eq!(c.K, 2);
        assert!(c.freeze_ranker);
        c.apply_overrides(&["seed=7", "lr_finetune = 0.5"]).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.lr_finetune, 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainingConfig::parse("nope = 1").is_err());
        assert!(TrainingConfig::parse("K = three").is_err());
        assert!(TrainingConfig::parse("K 3").is_err());
        assert!(TrainingConfig::parse("train_ranker_fre = 0").is_err());
        assert!(TrainingConfig::parse("lr_pretrain = -1").is_err());
        assert!(TrainingConfig::default().apply_overrides(&["K"]).is_err());
    }

    #[test]
    fn run_dir_depends_on_config_and_seed() {
        let a = TrainingConfig::default();
        let mut b = a.clone();
        b.seed = 2;
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.run_dir_name(), b.run_dir_name());
        b.K = 4;
        assert_ne!(a.hash(), b.hash());
    }
}
