//! Flat key-value experiment configuration with `[section]` headers.
//!
//! The format is deliberately minimal and diff-friendly:
//!
//! ```text
//! [phantom]
//! kind = rat
//! height = 64
//! ...
//! ```
//!
//! Every key is validated against the chosen method's schema before any
//! compute starts; unknown keys are configuration errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use dynpet::recon::{MapTvParams, NinrfConfig};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Section = BTreeMap<String, String>;

/// Raw parsed sections, before schema validation.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    pub sections: BTreeMap<String, Section>,
    /// The original text, echoed into run manifests.
    pub text: String,
}

pub fn parse(text: &str) -> Result<RawConfig, ConfigError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(i) => &raw_line[..i],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError(format!("line {}: unterminated section header", lineno + 1)))?
                .trim()
                .to_string();
            if sections.contains_key(&name) {
                return Err(ConfigError(format!("line {}: duplicate section [{name}]", lineno + 1)));
            }
            sections.insert(name.clone(), Section::new());
            current = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key = value", lineno + 1)))?;
        let section = current
            .as_ref()
            .ok_or_else(|| ConfigError(format!("line {}: key outside any [section]", lineno + 1)))?;
        let key = key.trim().to_string();
        let entry = sections.get_mut(section).unwrap();
        if entry.contains_key(&key) {
            return Err(ConfigError(format!("line {}: duplicate key '{key}' in [{section}]", lineno + 1)));
        }
        entry.insert(key, value.trim().to_string());
    }
    Ok(RawConfig { sections, text: text.to_string() })
}

pub fn parse_file(path: &Path) -> Result<RawConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    Rat,
    Brain,
    BrainTumor,
}

impl PhantomKind {
    pub fn name(&self) -> &'static str {
        match self {
            PhantomKind::Rat => "rat",
            PhantomKind::Brain => "brain",
            PhantomKind::BrainTumor => "brain_tumor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameSchedule {
    Uniform,
    Clinical,
}

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub frame_duration_min: f64,
    pub schedule: FrameSchedule,
}

impl PhantomSpec {
    pub fn frame_times(&self) -> (Vec<f64>, Vec<f64>) {
        match self.schedule {
            FrameSchedule::Uniform => {
                dynpet::phantom::uniform_frames(self.frames, self.frame_duration_min)
            }
            FrameSchedule::Clinical => dynpet::phantom::clinical_frames(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectorSpec {
    pub angles: usize,
    pub bins: usize,
}

#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub randoms_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum MethodSpec {
    Em { iterations: usize },
    EmNmf { rank: usize, iterations: usize },
    MapTv(MapTvParams),
    InrB(NinrfConfig),
    Ninrf(NinrfConfig),
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Em { .. } => "em",
            MethodSpec::EmNmf { .. } => "em_nmf",
            MethodSpec::MapTv(_) => "map_tv",
            MethodSpec::InrB(_) => "inr_b",
            MethodSpec::Ninrf(_) => "ninrf",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub phantom: PhantomSpec,
    pub projector: ProjectorSpec,
    pub noise: NoiseSpec,
    pub method: Option<MethodSpec>,
    pub raw: RawConfig,
}

struct SectionReader<'a> {
    name: &'a str,
    entries: &'a Section,
    allowed: &'a [&'a str],
}

impl<'a> SectionReader<'a> {
    fn check_keys(&self) -> Result<(), ConfigError> {
        for key in self.entries.keys() {
            if !self.allowed.contains(&key.as_str()) {
                return Err(ConfigError(format!(
                    "[{}]: unknown key '{key}' (allowed: {})",
                    self.name,
                    self.allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&'a str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError(format!("[{}]: missing required key '{key}'", self.name)))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T, ConfigError> {
        raw.parse()
            .map_err(|_| ConfigError(format!("[{}]: cannot parse '{key} = {raw}'", self.name)))
    }

    fn optional<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Ok(default),
        }
    }
}

fn reader<'a>(
    raw: &'a RawConfig,
    name: &'a str,
    allowed: &'a [&'a str],
) -> Result<SectionReader<'a>, ConfigError> {
    let entries = raw
        .sections
        .get(name)
        .ok_or_else(|| ConfigError(format!("missing [{name}] section")))?;
    let r = SectionReader { name, entries, allowed };
    r.check_keys()?;
    Ok(r)
}

impl ExperimentConfig {
    /// Parses and validates a configuration. `need_method` commands fail
    /// without a `[method]` section; others ignore it if well-formed.
    pub fn load(raw: RawConfig, need_method: bool) -> Result<Self, ConfigError> {
        let ph = reader(
            &raw,
            "phantom",
            &["kind", "height", "width", "frames", "frame_duration_min", "frame_schedule"],
        )?;
        let kind = match ph.require("kind")? {
            "rat" => PhantomKind::Rat,
            "brain" => PhantomKind::Brain,
            "brain_tumor" => PhantomKind::BrainTumor,
            other => return Err(ConfigError(format!("[phantom]: unknown kind '{other}'"))),
        };
        let (def_h, def_frames) = match kind {
            PhantomKind::Rat => (64usize, 90usize),
            PhantomKind::Brain => (128, 60),
            PhantomKind::BrainTumor => (192, 60),
        };
        let schedule = match ph.get("frame_schedule") {
            None | Some("uniform") => FrameSchedule::Uniform,
            Some("clinical") => FrameSchedule::Clinical,
            Some(other) => {
                return Err(ConfigError(format!("[phantom]: unknown frame_schedule '{other}'")))
            }
        };
        let phantom = PhantomSpec {
            kind,
            height: ph.optional("height", def_h)?,
            width: ph.optional("width", def_h)?,
            frames: ph.optional("frames", def_frames)?,
            frame_duration_min: ph.optional("frame_duration_min", 1.0)?,
            schedule,
        };
        if phantom.frame_duration_min <= 0.0 {
            return Err(ConfigError("[phantom]: frame_duration_min must be > 0".into()));
        }

        let pr = reader(&raw, "projector", &["angles", "bins"])?;
        let (def_na, def_nl) = match kind {
            PhantomKind::Rat => (16usize, 95usize),
            PhantomKind::Brain => (30, 195),
            PhantomKind::BrainTumor => (60, 275),
        };
        let projector =
            ProjectorSpec { angles: pr.optional("angles", def_na)?, bins: pr.optional("bins", def_nl)? };

        let no = reader(&raw, "noise", &["snr_db", "randoms_fraction", "seed"])?;
        let noise = NoiseSpec {
            snr_db: no.optional("snr_db", 20.0)?,
            randoms_fraction: no.optional("randoms_fraction", 0.0)?,
            seed: no.optional("seed", 1)?,
        };
        if !(0.0..1.0).contains(&noise.randoms_fraction) {
            return Err(ConfigError("[noise]: randoms_fraction must lie in [0, 1)".into()));
        }

        let method = match raw.sections.get("method") {
            Some(_) => Some(Self::load_method(&raw, &phantom, &noise)?),
            None if need_method => {
                return Err(ConfigError("missing [method] section".into()));
            }
            None => None,
        };

        Ok(ExperimentConfig { phantom, projector, noise, method, raw })
    }

    fn load_method(
        raw: &RawConfig,
        phantom: &PhantomSpec,
        noise: &NoiseSpec,
    ) -> Result<MethodSpec, ConfigError> {
        let name_section = raw.sections.get("method").unwrap();
        let name = name_section
            .get("name")
            .ok_or_else(|| ConfigError("[method]: missing required key 'name'".into()))?
            .as_str();
        match name {
            "em" => {
                let m = reader(raw, "method", &["name", "iterations"])?;
                Ok(MethodSpec::Em { iterations: m.optional("iterations", 100)? })
            }
            "em_nmf" => {
                let m = reader(raw, "method", &["name", "rank", "iterations"])?;
                Ok(MethodSpec::EmNmf {
                    rank: m.optional("rank", 5)?,
                    iterations: m.optional("iterations", 2000)?,
                })
            }
            "map_tv" => {
                let m = reader(
                    raw,
                    "method",
                    &["name", "lambda_tv1", "lambda_tv2", "rho", "iterations", "cg_iterations"],
                )?;
                let defaults = MapTvParams::default();
                Ok(MethodSpec::MapTv(MapTvParams {
                    lambda_tv1: m.optional("lambda_tv1", defaults.lambda_tv1)?,
                    lambda_tv2: m.optional("lambda_tv2", defaults.lambda_tv2)?,
                    rho: m.optional("rho", defaults.rho)?,
                    outer_iters: m.optional("iterations", defaults.outer_iters)?,
                    cg_iters: m.optional("cg_iterations", defaults.cg_iters)?,
                    cg_tol: defaults.cg_tol,
                }))
            }
            "ninrf" | "inr_b" => {
                let m = reader(
                    raw,
                    "method",
                    &[
                        "name",
                        "rank",
                        "lambda1",
                        "lambda2",
                        "iterations",
                        "warmup",
                        "lr_spatial",
                        "lr_temporal",
                        "encoding_dim",
                        "encoding_sigma",
                        "hidden_layers",
                        "hidden_width",
                        "temporal_hidden_layers",
                        "temporal_hidden_width",
                    ],
                )?;
                let base = match phantom.kind {
                    PhantomKind::Rat => NinrfConfig::rat_study(noise.snr_db),
                    PhantomKind::Brain => NinrfConfig::brain_study(),
                    PhantomKind::BrainTumor => NinrfConfig::tumor_study(),
                };
                let hidden_layers = m.optional("hidden_layers", base.spatial_hidden.len())?;
                let hidden_width = m.optional("hidden_width", base.spatial_hidden[0])?;
                let t_layers = m.optional("temporal_hidden_layers", base.temporal_hidden.len())?;
                let t_width = m.optional("temporal_hidden_width", base.temporal_hidden[0])?;
                let d = m.optional("encoding_dim", base.d1)?;
                let sigma = m.optional("encoding_sigma", base.sigma1)?;
                let cfg = NinrfConfig {
                    k: m.optional("rank", base.k)?,
                    lambda1: m.optional("lambda1", base.lambda1)?,
                    lambda2: m.optional("lambda2", base.lambda2)?,
                    i_max: m.optional("iterations", base.i_max)?,
                    warmup: m.optional("warmup", base.warmup)?,
                    lr_spatial: m.optional("lr_spatial", base.lr_spatial)?,
                    lr_temporal: m.optional("lr_temporal", base.lr_temporal)?,
                    d1: d,
                    d2: d,
                    sigma1: sigma,
                    sigma2: sigma,
                    spatial_hidden: vec![hidden_width; hidden_layers],
                    temporal_hidden: vec![t_width; t_layers],
                    seed: noise.seed,
                    ..base
                };
                cfg.validate().map_err(|e| ConfigError(format!("[method]: {e}")))?;
                if name == "ninrf" {
                    Ok(MethodSpec::Ninrf(cfg))
                } else {
                    Ok(MethodSpec::InrB(cfg))
                }
            }
            other => Err(ConfigError(format!("[method]: unknown method name '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RAT: &str = "\n[phantom]\nkind = rat\n\n[projector]\n\n[noise]\nseed = 3\n";

    #[test]
    fn parses_defaults() {
        let cfg = ExperimentConfig::load(parse(RAT).unwrap(), false).unwrap();
        assert_eq!(cfg.phantom.height, 64);
        assert_eq!(cfg.projector.angles, 16);
        assert_eq!(cfg.projector.bins, 95);
        assert_eq!(cfg.noise.seed, 3);
        assert!(cfg.method.is_none());
    }

    #[test]
    fn unknown_key_is_error() {
        let text = format!("{RAT}\n[method]\nname = em\nbogus = 1\n");
        let err = ExperimentConfig::load(parse(&text).unwrap(), true).unwrap_err();
        assert!(err.0.contains("bogus"));
    }

    #[test]
    fn unknown_method_is_error() {
        let text = format!("{RAT}\n[method]\nname = dip\n");
        let err = ExperimentConfig::load(parse(&text).unwrap(), true).unwrap_err();
        assert!(err.0.contains("dip"));
    }

    #[test]
    fn duplicate_key_is_error() {
        assert!(parse("[a]\nx = 1\nx = 2\n").is_err());
    }

    #[test]
    fn ninrf_defaults_follow_noise_level() {
        let text = format!("{RAT}\n[method]\nname = ninrf\n");
        let cfg = ExperimentConfig::load(parse(&text).unwrap(), true).unwrap();
        match cfg.method.unwrap() {
            MethodSpec::Ninrf(n) => {
                assert_eq!(n.k, 5);
                assert_eq!(n.lambda1, 10.0);
                assert_eq!(n.lambda2, 0.5);
                assert_eq!(n.seed, 3);
            }
            _ => panic!("expected ninrf"),
        }
    }
}
