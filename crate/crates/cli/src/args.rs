//! Argument parsing helpers shared by the subcommands.

use anyhow::{bail, Context, Result};
use clap::Args;
use stoqrl_core::lattice::{Lattice, Sector, SpinConfig};
use stoqrl_core::{ModelKind, StoquasticModel};

/// Model and lattice selection.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model family: "ising" or "xxz".
    #[arg(long, default_value = "ising")]
    pub model: String,

    /// ZZ coupling J (ferromagnetic for J > 0).
    #[arg(long, default_value_t = 1.0)]
    pub j: f64,

    /// Transverse field (Ising).
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,

    /// Exchange coupling (XXZ).
    #[arg(long)]
    pub j_perp: Option<f64>,

    /// Lattice extents: "8" for a chain, "4x4" for a square lattice.
    #[arg(long, default_value = "4")]
    pub dims: String,

    /// Open boundaries (default periodic).
    #[arg(long)]
    pub open: bool,

    /// Sector: "full" or a magnetization like "m=0".
    #[arg(long, default_value = "full")]
    pub sector: String,
}

/// Resolved model/lattice/sector configuration, echoed into every result.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResolvedModel {
    pub model: ModelKind,
    pub dims: Vec<usize>,
    pub periodic: Vec<bool>,
    pub sector: Sector,
}

pub fn parse_dims(text: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = text.split(['x', 'X']).collect();
    if parts.is_empty() || parts.len() > 2 {
        bail!("dims must be \"L\" or \"LxL\", got {text:?}");
    }
    parts
        .iter()
        .map(|p| p.parse::<usize>().with_context(|| format!("bad extent {p:?}")))
        .collect()
}

pub fn parse_sector(text: &str) -> Result<Sector> {
    if text.eq_ignore_ascii_case("full") {
        return Ok(Sector::Full);
    }
    let m_text = text.strip_prefix("m=").unwrap_or(text);
    let m: i32 = m_text
        .parse()
        .with_context(|| format!("sector must be \"full\" or \"m=<int>\", got {text:?}"))?;
    Ok(Sector::Magnetization(m))
}

impl ModelArgs {
    pub fn build(&self) -> Result<(StoquasticModel, Sector, ResolvedModel)> {
        let dims = parse_dims(&self.dims)?;
        let periodic = vec![!self.open; dims.len()];
        let lattice = Lattice::new(&dims, &periodic)?;
        let kind = match self.model.to_ascii_lowercase().as_str() {
            "ising" => ModelKind::Ising {
                j: self.j,
                h: self.h,
            },
            "xxz" | "xxx" => ModelKind::Xxz {
                j: self.j,
                j_perp: self.j_perp.unwrap_or(self.j),
            },
            other => bail!("unknown model {other:?} (expected \"ising\" or \"xxz\")"),
        };
        let sector = parse_sector(&self.sector)?;
        let resolved = ResolvedModel {
            model: kind,
            dims: dims.clone(),
            periodic: periodic.clone(),
            sector,
        };
        let model = StoquasticModel::new(kind, lattice)?;
        Ok((model, sector, resolved))
    }
}

pub fn parse_config_list(text: &str) -> Result<Vec<SpinConfig>> {
    text.split(',')
        .map(|part| SpinConfig::parse(part.trim()).map_err(Into::into))
        .collect()
}
