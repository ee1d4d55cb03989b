//! Experiment configuration: a flat key-value text format with section
//! headers, strict about unknown keys, with a canonical serialization that
//! round-trips bit-identically through the parser. Any key can be overridden
//! by an environment variable `COCYCLE_LAB_<SECTION>_<KEY>`.

use std::collections::BTreeMap;
use thiserror::Error;

pub const ENV_PREFIX: &str = "COCYCLE_LAB_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value` or `[section]`, got: {1}")]
    Malformed(usize, String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("missing required key `{key}` in section [{section}]")]
    MissingKey {
        section: &'static str,
        key: &'static str,
    },
    #[error("bad value for `{key}`: {detail}")]
    BadValue { key: String, detail: String },
    #[error("duplicate key `{key}` in section [{section}]")]
    DuplicateKey { section: String, key: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseConfig {
    /// Row-major integer matrix.
    pub matrix: [[i64; 2]; 2],
    /// Lattice periods; `1 1` is the standard torus.
    pub lattice: [i64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocycleConfig {
    /// constant | diagonal | conformal | expr | example46 | example46_cover
    /// | example46_diagonal
    pub kind: String,
    pub epsilon: Option<f64>,
    pub beta: f64,
    pub dim: Option<usize>,
    /// Semicolon-separated entry expressions (row-major) for `expr`,
    /// diagonal entries for `diagonal`, plain numbers for `constant`.
    pub entries: Option<String>,
    pub scale: Option<String>,
    pub angle: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: [usize; 2],
    pub orbit_length: i64,
    pub seeds: u32,
    pub tolerance: f64,
    pub n_max: usize,
    pub window: u64,
    pub xi: f64,
    pub eps_rate: f64,
    pub max_period: u32,
    pub distortion_cap: f64,
    /// ball | mean
    pub barycenter: String,
    pub leaf_distance: f64,
    pub triples: u32,
    pub history_samples: usize,
    pub growth_min_pow: u32,
    pub growth_max_pow: u32,
    /// lognorm | logk
    pub subadd_family: String,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            grid: [64, 64],
            orbit_length: 1_000_000,
            seeds: 8,
            tolerance: 1e-8,
            n_max: 256,
            window: 16,
            xi: 0.0,
            eps_rate: 0.05,
            max_period: 2,
            distortion_cap: 1e5,
            barycenter: "ball".into(),
            leaf_distance: 0.01,
            triples: 100,
            history_samples: 32,
            growth_min_pow: 4,
            growth_max_pow: 14,
            subadd_family: "logk".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub base: BaseConfig,
    pub cocycle: CocycleConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Parses the config text, then applies `COCYCLE_LAB_*` environment
    /// overrides.
    pub fn parse_with_env(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut map = raw_parse(text)?;
        for (key, value) in std::env::vars() {
            if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
                if let Some((section, key)) = rest.split_once('_') {
                    let section = section.to_ascii_lowercase();
                    let key = key.to_ascii_lowercase();
                    if ["base", "cocycle", "run"].contains(&section.as_str()) {
                        map.insert((section, key), value);
                    }
                }
            }
        }
        typed(map)
    }

    /// Parses the config text alone.
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        typed(raw_parse(text)?)
    }

    /// Canonical text form: fixed section order, sorted keys, shortest
    /// round-trip number formatting. `parse(serialize(c)) == c` and the text
    /// is a fixed point of serialize∘parse.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("[base]\n");
        out.push_str(&format!(
            "lattice = {} {}\n",
            self.base.lattice[0], self.base.lattice[1]
        ));
        out.push_str(&format!(
            "matrix = {} {} {} {}\n",
            self.base.matrix[0][0],
            self.base.matrix[0][1],
            self.base.matrix[1][0],
            self.base.matrix[1][1]
        ));
        out.push_str("\n[cocycle]\n");
        if let Some(angle) = &self.angle_nonempty() {
            out.push_str(&format!("angle = {angle}\n"));
        }
        out.push_str(&format!("beta = {}\n", self.cocycle.beta));
        if let Some(dim) = self.cocycle.dim {
            out.push_str(&format!("dim = {dim}\n"));
        }
        if let Some(entries) = &self.entries_nonempty() {
            out.push_str(&format!("entries = {entries}\n"));
        }
        if let Some(eps) = self.cocycle.epsilon {
            out.push_str(&format!("epsilon = {eps}\n"));
        }
        out.push_str(&format!("kind = {}\n", self.cocycle.kind));
        if let Some(scale) = &self.scale_nonempty() {
            out.push_str(&format!("scale = {scale}\n"));
        }
        let r = &self.run;
        out.push_str("\n[run]\n");
        out.push_str(&format!("barycenter = {}\n", r.barycenter));
        out.push_str(&format!("distortion_cap = {}\n", r.distortion_cap));
        out.push_str(&format!("eps_rate = {}\n", r.eps_rate));
        out.push_str(&format!("grid = {} {}\n", r.grid[0], r.grid[1]));
        out.push_str(&format!("growth_max_pow = {}\n", r.growth_max_pow));
        out.push_str(&format!("growth_min_pow = {}\n", r.growth_min_pow));
        out.push_str(&format!("history_samples = {}\n", r.history_samples));
        out.push_str(&format!("leaf_distance = {}\n", r.leaf_distance));
        out.push_str(&format!("max_period = {}\n", r.max_period));
        out.push_str(&format!("n_max = {}\n", r.n_max));
        out.push_str(&format!("orbit_length = {}\n", r.orbit_length));
        out.push_str(&format!("seeds = {}\n", r.seeds));
        out.push_str(&format!("subadd_family = {}\n", r.subadd_family));
        out.push_str(&format!("tolerance = {}\n", r.tolerance));
        out.push_str(&format!("triples = {}\n", r.triples));
        out.push_str(&format!("window = {}\n", r.window));
        out.push_str(&format!("xi = {}\n", r.xi));
        out
    }

    fn angle_nonempty(&self) -> Option<String> {
        self.cocycle.angle.clone().filter(|s| !s.is_empty())
    }

    fn scale_nonempty(&self) -> Option<String> {
        self.cocycle.scale.clone().filter(|s| !s.is_empty())
    }

    fn entries_nonempty(&self) -> Option<String> {
        self.cocycle.entries.clone().filter(|s| !s.is_empty())
    }
}

type RawMap = BTreeMap<(String, String), String>;

fn raw_parse(text: &str) -> Result<RawMap, ConfigError> {
    let mut map = RawMap::new();
    let mut section: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(idx) => &raw[..idx],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim().to_ascii_lowercase();
            if !["base", "cocycle", "run"].contains(&name.as_str()) {
                return Err(ConfigError::UnknownSection(name));
            }
            section = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Malformed(lineno + 1, raw.to_string()))?;
        let section = section
            .clone()
            .ok_or_else(|| ConfigError::Malformed(lineno + 1, "key before any [section]".into()))?;
        let key = key.trim().to_ascii_lowercase();
        if map
            .insert((section.clone(), key.clone()), value.trim().to_string())
            .is_some()
        {
            return Err(ConfigError::DuplicateKey { section, key });
        }
    }
    Ok(map)
}

struct Section<'a> {
    name: &'static str,
    map: &'a mut RawMap,
}

impl<'a> Section<'a> {
    fn take(&mut self, key: &'static str) -> Option<String> {
        self.map.remove(&(self.name.to_string(), key.to_string()))
    }

    fn required(&mut self, key: &'static str) -> Result<String, ConfigError> {
        self.take(key).ok_or(ConfigError::MissingKey {
            section: self.name,
            key,
        })
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        detail: format!("{e} (got `{value}`)"),
    })
}

fn parse_list<T, const N: usize>(key: &str, value: &str) -> Result<[T; N], ConfigError>
where
    T: std::str::FromStr + Copy + Default,
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != N {
        return Err(ConfigError::BadValue {
            key: key.to_string(),
            detail: format!("expected {N} entries, got {}", parts.len()),
        });
    }
    let mut out = [T::default(); N];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = parse_num(key, part)?;
    }
    Ok(out)
}

fn typed(mut map: RawMap) -> Result<ExperimentConfig, ConfigError> {
    let base = {
        let mut s = Section {
            name: "base",
            map: &mut map,
        };
        let m: [i64; 4] = parse_list("matrix", &s.required("matrix")?)?;
        let lattice = match s.take("lattice") {
            Some(v) => parse_list("lattice", &v)?,
            None => [1, 1],
        };
        BaseConfig {
            matrix: [[m[0], m[1]], [m[2], m[3]]],
            lattice,
        }
    };
    let cocycle = {
        let mut s = Section {
            name: "cocycle",
            map: &mut map,
        };
        CocycleConfig {
            kind: s.required("kind")?,
            epsilon: s
                .take("epsilon")
                .map(|v| parse_num("epsilon", &v))
                .transpose()?,
            beta: match s.take("beta") {
                Some(v) => parse_num("beta", &v)?,
                None => 1.0,
            },
            dim: s.take("dim").map(|v| parse_num("dim", &v)).transpose()?,
            entries: s.take("entries"),
            scale: s.take("scale"),
            angle: s.take("angle"),
        }
    };
    let run = {
        let mut s = Section {
            name: "run",
            map: &mut map,
        };
        let d = RunConfig::default();
        RunConfig {
            grid: match s.take("grid") {
                Some(v) => {
                    let g: [usize; 2] = parse_list("grid", &v)?;
                    g
                }
                None => d.grid,
            },
            orbit_length: opt(&mut s, "orbit_length", d.orbit_length)?,
            seeds: opt(&mut s, "seeds", d.seeds)?,
            tolerance: opt(&mut s, "tolerance", d.tolerance)?,
            n_max: opt(&mut s, "n_max", d.n_max)?,
            window: opt(&mut s, "window", d.window)?,
            xi: opt(&mut s, "xi", d.xi)?,
            eps_rate: opt(&mut s, "eps_rate", d.eps_rate)?,
            max_period: opt(&mut s, "max_period", d.max_period)?,
            distortion_cap: opt(&mut s, "distortion_cap", d.distortion_cap)?,
            barycenter: s.take("barycenter").unwrap_or(d.barycenter),
            leaf_distance: opt(&mut s, "leaf_distance", d.leaf_distance)?,
            triples: opt(&mut s, "triples", d.triples)?,
            history_samples: opt(&mut s, "history_samples", d.history_samples)?,
            growth_min_pow: opt(&mut s, "growth_min_pow", d.growth_min_pow)?,
            growth_max_pow: opt(&mut s, "growth_max_pow", d.growth_max_pow)?,
            subadd_family: s.take("subadd_family").unwrap_or(d.subadd_family),
        }
    };
    if let Some(((section, key), _)) = map.into_iter().next() {
        return Err(ConfigError::UnknownKey { section, key });
    }
    Ok(ExperimentConfig { base, cocycle, run })
}

fn opt<T: std::str::FromStr>(
    s: &mut Section,
    key: &'static str,
    default: T,
) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    match s.take(key) {
        Some(v) => parse_num(key, &v),
        None => Ok(default),
    }
}
