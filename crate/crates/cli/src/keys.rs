//! Configuration flags generated from the key table: `--config FILE` plus
//! one `--some-key VALUE` flag per key. Values stay strings here and are
//! parsed by `PipelineConfig::set`, so the CLI and config files share one
//! validation path.

use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use drnmf::pipeline::{PipelineConfig, KEYS};

pub const HEADING: &str = "Configuration";

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

#[derive(Debug, Clone, Default)]
pub struct ConfigArgs {
    pub config: Option<PathBuf>,
    /// `(key, value)` in table order.
    pub overrides: Vec<(String, String)>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> drnmf::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = ConfigArgs::default();
        out.update_from_arg_matches(m)?;
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        if let Some(p) = m.get_one::<PathBuf>("config") {
            self.config = Some(p.clone());
        }
        for k in KEYS {
            if let Some(v) = m.get_one::<String>(k.name) {
                self.overrides.retain(|(name, _)| name != k.name);
                self.overrides.push((k.name.to_string(), v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value file; flags below take precedence")
                .help_heading(HEADING),
        );
        for k in KEYS {
            let mut arg = Arg::new(k.name)
                .long(flag_name(k.name))
                .value_name("VALUE")
                .help(format!("{} [default: {}]", k.help, k.default))
                .help_heading(HEADING);
            if k.name == "corpus_seed" {
                arg = arg.visible_alias("seed");
            }
            cmd = cmd.arg(arg);
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

/// Listing for the top-level help.
pub fn key_table() -> String {
    let width = KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (config file name, flag --name-with-dashes):\n");
    for k in KEYS {
        s.push_str(&format!("  {:width$}  {:>8}  {}\n", k.name, k.default, k.help));
    }
    s
}

/// Writes the effective configuration next to an output file, as
/// `<file>.config.txt`, or into an output directory as `config.txt`.
pub fn echo_config(cfg: &PipelineConfig, output: &Path, is_dir: bool) -> drnmf::Result<PathBuf> {
    let path = if is_dir {
        output.join("config.txt")
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".config.txt");
        output.with_file_name(name)
    };
    std::fs::write(&path, cfg.to_text()).map_err(|e| drnmf::Error::Io { path: path.clone(), source: e })?;
    Ok(path)
}
