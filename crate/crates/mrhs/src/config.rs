//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use mrhs_core::dirac::DiracParams;
use mrhs_core::field::{Layout, LayoutPolicy};
use mrhs_core::gauge::{CloverField, CloverMode, GaugeField, GaugeMode};
use mrhs_core::geometry::{LatticeGeometry, RankGrid, NDIM};
use mrhs_core::gmres::GmresConfig;

use crate::error::{Error, Result};

/// Generator used for every seeded field, reported in output headers.
pub const RNG_NAME: &str = "ChaCha8Rng";

/// Largest lattice volume the CLI accepts.
pub const MAX_SITES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dims: [usize; NDIM],
    pub boundary: Boundary,
    pub ranks: [usize; NDIM],
    pub b: Vec<usize>,
    pub layouts: Vec<Layout>,
    pub m0: f64,
    pub clover_mode: CloverKind,
    pub clover_scale: f64,
    pub gauge_mode: GaugeMode,
    pub seed: u64,
    pub threads: usize,
    pub tol: f64,
    pub restart_len: usize,
    pub restarts: usize,
    pub odd_even: bool,
    pub fixed_iterations: bool,
    pub format: OutputFormat,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloverKind {
    Zero,
    Random,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dims: [4; NDIM],
            boundary: Boundary::Periodic,
            ranks: [1; NDIM],
            b: vec![1],
            layouts: vec![Layout::ColumnMajor],
            m0: -0.5,
            clover_mode: CloverKind::Random,
            clover_scale: 0.1,
            gauge_mode: GaugeMode::Random,
            seed: 1,
            threads: 1,
            tol: 1e-8,
            restart_len: 10,
            restarts: 10,
            odd_even: false,
            fixed_iterations: false,
            format: OutputFormat::Csv,
            path: String::new(),
        }
    }
}

pub const KEYS: [&str; 18] = [
    "lattice.dims",
    "lattice.boundary",
    "ranks.grid",
    "block.b",
    "block.layout",
    "dirac.m0",
    "clover.mode",
    "clover.scale",
    "gauge.mode",
    "seed",
    "threads",
    "solver.tol",
    "solver.restart_len",
    "solver.restarts",
    "solver.odd_even",
    "solver.fixed_iterations",
    "output.format",
    "output.path",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: {what}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "not a number"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| parse_num(key, t))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(key, value, "empty list"));
    }
    Ok(items)
}

fn parse_dims(key: &str, value: &str) -> Result<[usize; NDIM]> {
    let v: Vec<usize> = parse_list(key, value)?;
    v.try_into().map_err(|_| bad(key, value, "expected four integers"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

impl RunConfig {
    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), n + 1).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` assignment without validating the whole.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim().trim_matches('"');
        match key {
            "lattice.dims" => self.dims = parse_dims(key, value)?,
            "lattice.boundary" => {
                self.boundary = match value {
                    "periodic" => Boundary::Periodic,
                    _ => return Err(bad(key, value, "only periodic boundaries are supported")),
                }
            }
            "ranks.grid" => self.ranks = parse_dims(key, value)?,
            "block.b" => self.b = parse_list(key, value)?,
            "block.layout" => {
                self.layouts = parse_list::<u8>(key, value)?
                    .into_iter()
                    .map(|n| Layout::from_number(n).map_err(|_| bad(key, value, "layouts are 1 or 2")))
                    .collect::<Result<_>>()?
            }
            "dirac.m0" => self.m0 = parse_num(key, value)?,
            "clover.mode" => {
                self.clover_mode = match value {
                    "zero" => CloverKind::Zero,
                    "random" => CloverKind::Random,
                    _ => return Err(bad(key, value, "expected zero or random")),
                }
            }
            "clover.scale" => self.clover_scale = parse_num(key, value)?,
            "gauge.mode" => {
                self.gauge_mode = match value {
                    "unit" => GaugeMode::Unit,
                    "random" => GaugeMode::Random,
                    _ => return Err(bad(key, value, "expected unit or random")),
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "threads" => self.threads = parse_num(key, value)?,
            "solver.tol" => self.tol = parse_num(key, value)?,
            "solver.restart_len" => self.restart_len = parse_num(key, value)?,
            "solver.restarts" => self.restarts = parse_num(key, value)?,
            "solver.odd_even" => self.odd_even = parse_bool(key, value)?,
            "solver.fixed_iterations" => self.fixed_iterations = parse_bool(key, value)?,
            "output.format" => {
                self.format = match value {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    _ => return Err(bad(key, value, "expected csv or json")),
                }
            }
            "output.path" => self.path = value.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let geom = LatticeGeometry::new(self.dims).map_err(|e| Error::Config(format!("lattice.dims: {e}")))?;
        if geom.n_sites() > MAX_SITES {
            return Err(Error::Config(format!("lattice.dims: {} sites exceeds {MAX_SITES}", geom.n_sites())));
        }
        RankGrid::new(&geom, self.ranks).map_err(|e| Error::Config(format!("ranks.grid: {e}")))?;
        if let Some(b) = self.b.iter().find(|&&b| b == 0) {
            return Err(Error::Config(format!("block.b: {b} is not a positive integer")));
        }
        if !self.m0.is_finite() {
            return Err(Error::Config("dirac.m0 must be finite".into()));
        }
        if !(self.clover_scale.is_finite() && self.clover_scale >= 0.0) {
            return Err(Error::Config("clover.scale must be finite and non-negative".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.gmres()
            .validate()
            .map_err(|e| Error::Config(format!("solver: {e}")))?;
        Ok(())
    }

    /// Every key in fixed order with normalized values.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut keys = KEYS.iter();
        let mut put = |k: &str, v: String| {
            debug_assert_eq!(keys.next(), Some(&k));
            writeln!(s, "{k} = {v}").expect("string write")
        };
        put("lattice.dims", join(&self.dims));
        put("lattice.boundary", "periodic".into());
        put("ranks.grid", join(&self.ranks));
        put("block.b", join(&self.b));
        put("block.layout", join(&self.layouts.iter().map(|l| l.number()).collect::<Vec<_>>()));
        put("dirac.m0", format!("{:?}", self.m0));
        put(
            "clover.mode",
            match self.clover_mode {
                CloverKind::Zero => "zero",
                CloverKind::Random => "random",
            }
            .into(),
        );
        put("clover.scale", format!("{:?}", self.clover_scale));
        put(
            "gauge.mode",
            match self.gauge_mode {
                GaugeMode::Unit => "unit",
                GaugeMode::Random => "random",
            }
            .into(),
        );
        put("seed", self.seed.to_string());
        put("threads", self.threads.to_string());
        put("solver.tol", format!("{:?}", self.tol));
        put("solver.restart_len", self.restart_len.to_string());
        put("solver.restarts", self.restarts.to_string());
        put("solver.odd_even", self.odd_even.to_string());
        put("solver.fixed_iterations", self.fixed_iterations.to_string());
        put(
            "output.format",
            match self.format {
                OutputFormat::Csv => "csv",
                OutputFormat::Json => "json",
            }
            .into(),
        );
        put("output.path", format!("{:?}", self.path));
        s
    }

    /// Hex SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn geometry(&self) -> Result<LatticeGeometry> {
        Ok(LatticeGeometry::new(self.dims)?)
    }

    pub fn params(&self) -> DiracParams {
        DiracParams::new(self.m0)
    }

    pub fn gauge(&self, geom: &LatticeGeometry) -> GaugeField {
        GaugeField::generate(geom, self.gauge_mode, self.seed)
    }

    pub fn clover(&self, geom: &LatticeGeometry) -> CloverField {
        let mode = match self.clover_mode {
            CloverKind::Zero => CloverMode::Zero,
            CloverKind::Random => CloverMode::RandomHermitian {
                scale: self.clover_scale,
            },
        };
        CloverField::generate(geom, mode, self.seed.wrapping_add(1))
    }

    /// Seed of the right-hand-side block.
    pub fn rhs_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    /// First block size and layout, used by single-run commands.
    pub fn policy(&self) -> Result<LayoutPolicy> {
        Ok(LayoutPolicy::new(self.layouts[0], self.b[0])?)
    }

    pub fn gmres(&self) -> GmresConfig {
        GmresConfig {
            restart_len: self.restart_len,
            restarts: self.restarts,
            tol: self.tol,
            fixed_iterations: self.fixed_iterations,
            ..GmresConfig::default()
        }
    }
}
