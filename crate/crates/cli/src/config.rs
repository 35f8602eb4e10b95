//! Run configuration: a key=value file merged with command-line flags.
//!
//! `data` and `out` in a config file resolve against the file's directory;
//! the same flags on the command line resolve against the working directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nodeformer::trainer::{parse_kv, TrainConfig};

use crate::Failure;

/// Keys a manifest carries that are not hyperparameters.
const MANIFEST_ONLY: [&str; 2] = ["build", "created_unix"];

pub const BUILD_ID: &str = env!("NODEFORMER_BUILD_ID");

#[derive(Clone, Debug)]
pub struct RunSettings {
    pub config: TrainConfig,
    pub data: PathBuf,
    pub out: PathBuf,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// `--key value` and `--key=value` pairs.
fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            return Err(usage(format!("unexpected argument `{a}`")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| usage(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        if !TrainConfig::KEYS.contains(&key.as_str()) {
            return Err(usage(format!(
                "unknown option --{key}; fields are {}",
                TrainConfig::KEYS.join(", ")
            )));
        }
        out.push((key, value));
    }
    Ok(out)
}

impl RunSettings {
    pub fn resolve(
        config_path: Option<&Path>,
        data: Option<&Path>,
        out: Option<&Path>,
        seed: Option<u64>,
        overrides: &[String],
    ) -> Result<Self, Failure> {
        let mut config = TrainConfig::default();
        let mut file_data = None;
        let mut file_out = None;
        if let Some(path) = config_path {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new(""));
            let pairs = parse_kv(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            for (k, v) in pairs {
                match k.as_str() {
                    "data" => file_data = Some(base.join(v)),
                    "out" => file_out = Some(base.join(v)),
                    k if MANIFEST_ONLY.contains(&k) => {}
                    _ => config
                        .set(&k, &v)
                        .map_err(|e| usage(format!("{}: {e}", path.display())))?,
                }
            }
        }
        for (k, v) in parse_overrides(overrides)? {
            config.set(&k, &v).map_err(|e| usage(e.to_string()))?;
        }
        if let Some(s) = seed {
            config.seed = s;
        }
        config.validate().map_err(|e| usage(e.to_string()))?;
        let data = data
            .map(Path::to_path_buf)
            .or(file_data)
            .ok_or_else(|| usage("no dataset: pass --data or set data= in the config"))?;
        if !data.is_dir() {
            return Err(usage(format!("dataset directory {} does not exist", data.display())));
        }
        let out = out
            .map(Path::to_path_buf)
            .or(file_out)
            .unwrap_or_else(|| PathBuf::from("nodeformer-run"));
        Ok(RunSettings { config, data, out })
    }

    /// Resolved settings as a config file that reproduces the run.
    pub fn manifest(&self) -> String {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
        format!(
            "build={BUILD_ID}\ncreated_unix={created}\ndata={}\nout={}\n{}",
            abs(&self.data).display(),
            abs(&self.out).display(),
            self.config.to_kv_string()
        )
    }
}
