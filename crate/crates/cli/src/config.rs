//! Run configuration: defaults, an optional `key=value` config file, and
//! command-line flags, in that precedence order (flags win). Unknown keys are
//! errors in both sources.

use std::fs;
use std::path::PathBuf;

use crate::errors::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: String,
    pub solver: String,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub omega1: [f64; 2],
    pub omega2: [f64; 2],
    pub noise_sigma: Option<f64>,
    pub seed: u64,
    pub reference: Option<PathBuf>,
    pub iters: usize,
    pub tol: f64,
    pub metrics: Option<PathBuf>,
    pub wall_time: bool,
    /// Explicit forward-backward steps (one common value per family); all six
    /// must be given to take effect, otherwise the heuristic defaults apply.
    pub tau: Option<f64>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    /// Explicit forward-backward-forward step.
    pub fbf_gamma: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "ic".into(),
            solver: "fb".into(),
            input: None,
            output: None,
            alpha1: 0.06,
            alpha2: 0.2,
            omega1: [1.0, 1.0],
            omega2: [1.0, 1.0],
            noise_sigma: None,
            seed: 0,
            reference: None,
            iters: 500,
            tol: 1e-8,
            metrics: None,
            wall_time: false,
            tau: None,
            theta1: None,
            theta2: None,
            gamma1: None,
            gamma2: None,
            sigma: None,
            lambda: None,
            fbf_gamma: None,
        }
    }
}

impl RunConfig {
    /// Parse flags (after the subcommand). A `--config FILE` flag, wherever it
    /// appears, loads the file first so explicit flags override it.
    pub fn from_args(args: &[String]) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        // first pass: find --config
        let mut i = 0;
        while i < args.len() {
            if args[i] == "--config" {
                let path = args
                    .get(i + 1)
                    .ok_or_else(|| CliError::Usage("--config needs a path".into()))?;
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("reading config {path}: {e}")))?;
                cfg.apply_file(&text)?;
                i += 2;
            } else {
                i += 1;
            }
        }
        // second pass: flags
        let mut i = 0;
        while i < args.len() {
            let flag = &args[i];
            if flag == "--config" {
                i += 2;
                continue;
            }
            if flag == "--wall-time" {
                cfg.wall_time = true;
                i += 1;
                continue;
            }
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("expected a --flag, got '{flag}'")))?;
            let value = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?;
            cfg.set(key, value)?;
            i += 2;
        }
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key=value", lineno + 1))
            })?;
            if key.trim() == "wall-time" {
                self.wall_time = parse_bool(value.trim())?;
            } else {
                self.set(key.trim(), value.trim())?;
            }
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "model" => self.model = value.to_string(),
            "solver" => self.solver = value.to_string(),
            "input" => self.input = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            "alpha1" => self.alpha1 = parse_num(key, value)?,
            "alpha2" => self.alpha2 = parse_num(key, value)?,
            "omega1" => self.omega1 = parse_pair(key, value)?,
            "omega2" => self.omega2 = parse_pair(key, value)?,
            "noise-sigma" => self.noise_sigma = Some(parse_num(key, value)?),
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad integer for --{key}: '{value}'")))?
            }
            "reference" => self.reference = Some(PathBuf::from(value)),
            "iters" => {
                self.iters = value
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad integer for --{key}: '{value}'")))?
            }
            "tol" => self.tol = parse_num(key, value)?,
            "metrics" => self.metrics = Some(PathBuf::from(value)),
            "tau" => self.tau = Some(parse_num(key, value)?),
            "theta1" => self.theta1 = Some(parse_num(key, value)?),
            "theta2" => self.theta2 = Some(parse_num(key, value)?),
            "gamma1" => self.gamma1 = Some(parse_num(key, value)?),
            "gamma2" => self.gamma2 = Some(parse_num(key, value)?),
            "sigma" => self.sigma = Some(parse_num(key, value)?),
            "lambda" => self.lambda = Some(parse_num(key, value)?),
            "fbf-gamma" => self.fbf_gamma = Some(parse_num(key, value)?),
            other => return Err(CliError::Usage(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// The six explicit forward-backward steps, when all are present.
    pub fn explicit_fb_steps(&self) -> Result<Option<[f64; 6]>, CliError> {
        let given = [
            self.tau,
            self.theta1,
            self.theta2,
            self.gamma1,
            self.gamma2,
            self.sigma,
        ];
        let count = given.iter().filter(|v| v.is_some()).count();
        match count {
            0 => Ok(None),
            6 => Ok(Some(given.map(|v| v.unwrap()))),
            _ => Err(CliError::Usage(
                "explicit steps need all of --tau --theta1 --theta2 --gamma1 --gamma2 --sigma"
                    .into(),
            )),
        }
    }
}

fn parse_num(key: &str, value: &str) -> Result<f64, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("bad number for --{key}: '{value}'")))
}

fn parse_pair(key: &str, value: &str) -> Result<[f64; 2], CliError> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!(
            "--{key} expects two comma-separated numbers, got '{value}'"
        )));
    }
    Ok([parse_num(key, parts[0])?, parse_num(key, parts[1])?])
}

fn parse_bool(value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(CliError::Usage(format!("bad boolean '{other}'"))),
    }
}

/// Verbosity from the PDSPLIT_LOG environment variable: quiet, info (default),
/// or debug.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Quiet,
    Info,
    Debug,
}

pub fn log_level() -> LogLevel {
    match std::env::var("PDSPLIT_LOG").as_deref() {
        Ok("quiet") => LogLevel::Quiet,
        Ok("debug") => LogLevel::Debug,
        _ => LogLevel::Info,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::from_args(&args(&[])).unwrap();
        assert_eq!(cfg.model, "ic");
        assert_eq!(cfg.alpha1, 0.06);
        assert_eq!(cfg.alpha2, 0.2);

        let cfg = RunConfig::from_args(&args(&[
            "--model",
            "mic",
            "--alpha1",
            "0.1",
            "--omega1",
            "2,0.5",
            "--seed",
            "9",
        ]))
        .unwrap();
        assert_eq!(cfg.model, "mic");
        assert_eq!(cfg.alpha1, 0.1);
        assert_eq!(cfg.omega1, [2.0, 0.5]);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(RunConfig::from_args(&args(&["--bogus", "1"])).is_err());
        assert!(RunConfig::from_args(&args(&["--alpha1", "abc"])).is_err());
        assert!(RunConfig::from_args(&args(&["--alpha1"])).is_err());
        assert!(RunConfig::from_args(&args(&["positional"])).is_err());
    }

    #[test]
    fn config_file_with_flag_precedence() {
        let dir = std::env::temp_dir().join(format!("pdsplit-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# comment\nmodel=mic\nalpha1=0.5\niters=42\n").unwrap();
        let cfg = RunConfig::from_args(&args(&[
            "--config",
            path.to_str().unwrap(),
            "--alpha1",
            "0.9",
        ]))
        .unwrap();
        assert_eq!(cfg.model, "mic"); // from file
        assert_eq!(cfg.alpha1, 0.9); // flag wins
        assert_eq!(cfg.iters, 42);

        std::fs::write(&path, "mystery=1\n").unwrap();
        let err = RunConfig::from_args(&args(&["--config", path.to_str().unwrap()]));
        assert!(matches!(err, Err(CliError::Usage(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn explicit_steps_all_or_nothing() {
        let cfg = RunConfig::from_args(&args(&["--tau", "0.1"])).unwrap();
        assert!(cfg.explicit_fb_steps().is_err());
        let cfg = RunConfig::from_args(&args(&[
            "--tau", "0.1", "--theta1", "0.1", "--theta2", "0.1", "--gamma1", "0.1", "--gamma2",
            "0.1", "--sigma", "0.1",
        ]))
        .unwrap();
        assert_eq!(cfg.explicit_fb_steps().unwrap(), Some([0.1; 6]));
    }
}
