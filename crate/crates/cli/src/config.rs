//! Flat `key=value` config files and value parsers shared by the subcommands.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::UsageError;

/// Keys accepted in a config file. Section prefixes mirror the flag groups.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "jobs",
    "out",
    "data.path",
    "data.target",
    "data.categorical",
    "data.synthetic",
    "data.max_features",
    "model.family",
    "model.families",
    "model.lambda",
    "model.rho",
    "attack.method",
    "attack.methods",
    "attack.alpha",
    "attack.alphas",
    "attack.epsilon_conv",
    "attack.max_iters",
    "defense.method",
    "defense.methods",
    "defense.gamma",
    "defense.gammas",
    "defense.epsilon",
    "defense.alpha_assumed",
    "defense.max_iters",
    "sweep.repeats",
    "sweep.surrogate_fraction",
    "sweep.train_subsample",
    "sweep.iterations_per_second",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(UsageError::new(
                    "--config",
                    format!("line {}: expected key=value", lineno + 1),
                ));
            };
            let key = k.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(UsageError::new(
                    "--config",
                    format!("line {}: unknown key `{key}`", lineno + 1),
                ));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Resolves one setting: flag, then config file, then nothing.
pub fn resolve<T>(flag: Option<T>, cfg: &ConfigFile, key: &str, flag_name: &str) -> Result<Option<T>, UsageError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match cfg.raw(key) {
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|e| UsageError::new(flag_name, format!("config key {key}: {e}"))),
        None => Ok(None),
    }
}

/// A list of floats given either as `a,b,c` or as an inclusive range
/// `start:stop:step`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [start, stop, step] => {
                let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("invalid number `{t}`"));
                let (a, b, h) = (num(start)?, num(stop)?, num(step)?);
                if !(h > 0.0) || b < a {
                    return Err(format!("invalid range `{s}`"));
                }
                let k = ((b - a) / h + 1e-9).floor() as usize;
                Ok(FloatList(
                    (0..=k).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect(),
                ))
            }
            [_] => s
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| format!("invalid number `{t}`")))
                .collect::<Result<_, _>>()
                .map(FloatList),
            _ => Err(format!("expected a,b,c or start:stop:step, got `{s}`")),
        }
    }
}

/// Comma-separated list of values parsed with `T::from_str`.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<T>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()
            .map(List)
    }
}

/// `d=5,n=300,noise=0.1[,seed=7]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticArg {
    pub d: usize,
    pub n: usize,
    pub noise: f64,
    pub seed: Option<u64>,
}

impl FromStr for SyntheticArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (mut d, mut n, mut noise, mut seed) = (None, None, None, None);
        for part in s.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value in `{part}`"))?;
            let bad = || format!("invalid value for {k}: `{v}`");
            match k.trim() {
                "d" => d = Some(v.trim().parse().map_err(|_| bad())?),
                "n" => n = Some(v.trim().parse().map_err(|_| bad())?),
                "noise" => noise = Some(v.trim().parse().map_err(|_| bad())?),
                "seed" => seed = Some(v.trim().parse().map_err(|_| bad())?),
                other => return Err(format!("unknown synthetic key `{other}`")),
            }
        }
        let arg = SyntheticArg {
            d: d.ok_or("missing d")?,
            n: n.ok_or("missing n")?,
            noise: noise.unwrap_or(0.1),
            seed,
        };
        if arg.d == 0 || arg.n < 2 || !(arg.noise >= 0.0) {
            return Err(format!("invalid synthetic spec `{s}`"));
        }
        Ok(arg)
    }
}

/// Fixed λ or `auto` (validation-selected).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaArg {
    Auto,
    Fixed(f64),
}

impl FromStr for LambdaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(LambdaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(LambdaArg::Fixed(v)),
            _ => Err(format!("expected a nonnegative number or `auto`, got `{s}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_range_has_five_points() {
        let FloatList(v) = "0.04:0.20:0.04".parse().unwrap();
        assert_eq!(v, vec![0.04, 0.08, 0.12, 0.16, 0.2]);
        assert_eq!("0.1,0.2".parse::<FloatList>().unwrap().0, vec![0.1, 0.2]);
        assert!("0.2:0.1:0.01".parse::<FloatList>().is_err());
        assert!("1:2".parse::<FloatList>().is_err());
    }

    #[test]
    fn synthetic_spec_parses() {
        let s: SyntheticArg = "d=5,n=300,noise=0.1".parse().unwrap();
        assert_eq!((s.d, s.n, s.noise, s.seed), (5, 300, 0.1, None));
        assert!("d=5".parse::<SyntheticArg>().is_err());
        assert!("d=5,n=3,x=1".parse::<SyntheticArg>().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_resolves() {
        let cfg = ConfigFile::parse("# comment\nattack.alpha = 0.1\n\nseed=3\n").unwrap();
        assert_eq!(resolve::<f64>(None, &cfg, "attack.alpha", "--alpha").unwrap(), Some(0.1));
        assert_eq!(resolve(Some(0.2), &cfg, "attack.alpha", "--alpha").unwrap(), Some(0.2));
        assert!(ConfigFile::parse("bogus=1").is_err());
        assert!(ConfigFile::parse("seed").is_err());
    }

    #[test]
    fn lambda_arg() {
        assert_eq!("auto".parse::<LambdaArg>().unwrap(), LambdaArg::Auto);
        assert_eq!("0.1".parse::<LambdaArg>().unwrap(), LambdaArg::Fixed(0.1));
        assert!("-1".parse::<LambdaArg>().is_err());
    }
}
