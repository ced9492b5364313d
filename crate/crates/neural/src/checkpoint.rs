//! Checkpoint format: versioned JSON header followed by raw little-endian
//! f64 parameter arrays in layer order (weights then bias per layer).
//!
//! ```text
//! magic "SQCK" | u32 version | u64 header_len | header JSON | f64 LE data
//! ```

use crate::error::{NeuralError, Result};
use crate::loss::TrainFormulation;
use crate::net::QNetwork;
use std::io::{Read, Write};
use std::path::Path;
use stoqrl_core::lattice::Lattice;
use stoqrl_core::{ModelKind, StoquasticModel};

const MAGIC: &[u8; 4] = b"SQCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub schema: u32,
    pub model: ModelKind,
    pub dims: Vec<usize>,
    pub periodic: Vec<bool>,
    pub formulation: TrainFormulation,
    pub hidden_layers: usize,
    pub channels: usize,
    /// (out_ch, in_ch, kernel_offsets) per layer, for shape validation.
    pub param_shapes: Vec<(usize, usize, usize)>,
    pub e0_estimate: f64,
    pub episode: usize,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub net: QNetwork,
}

impl Checkpoint {
    pub fn model(&self) -> Result<StoquasticModel> {
        let lattice = Lattice::new(&self.header.dims, &self.header.periodic)
            .map_err(NeuralError::Core)?;
        StoquasticModel::new(self.header.model, lattice).map_err(NeuralError::Core)
    }
}

pub fn save_checkpoint(
    path: &Path,
    net: &QNetwork,
    model: &StoquasticModel,
    formulation: TrainFormulation,
    hidden_layers: usize,
    channels: usize,
    e0_estimate: f64,
    episode: usize,
) -> Result<()> {
    let header = CheckpointHeader {
        schema: VERSION,
        model: model.kind(),
        dims: model.lattice().dims().to_vec(),
        periodic: model.lattice().periodic().to_vec(),
        formulation,
        hidden_layers,
        channels,
        param_shapes: net
            .param_shapes()
            .into_iter()
            .map(|(o, i, k, _)| (o, i, k))
            .collect(),
        e0_estimate,
        episode,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| NeuralError::Checkpoint(format!("header encoding: {e}")))?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for layer in &net.layers {
        for &w in layer.weights.iter().chain(&layer.bias) {
            file.write_all(&w.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NeuralError::Checkpoint("bad magic bytes".into()));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(NeuralError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| NeuralError::Checkpoint(format!("header decoding: {e}")))?;

    let lattice =
        Lattice::new(&header.dims, &header.periodic).map_err(NeuralError::Core)?;
    let mut net = QNetwork::new(&lattice, header.hidden_layers, header.channels, 0)?;
    let expected: Vec<(usize, usize, usize)> = net
        .param_shapes()
        .into_iter()
        .map(|(o, i, k, _)| (o, i, k))
        .collect();
    if expected != header.param_shapes {
        return Err(NeuralError::Checkpoint(format!(
            "parameter shapes {:?} do not match architecture {:?}",
            header.param_shapes, expected
        )));
    }
    let mut buf = [0u8; 8];
    for layer in &mut net.layers {
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            file.read_exact(&mut buf)?;
            *w = f64::from_le_bytes(buf);
        }
    }
    let mut trailing = Vec::new();
    file.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(NeuralError::Checkpoint(format!(
            "{} trailing bytes",
            trailing.len()
        )));
    }
    Ok(Checkpoint { header, net })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stoqrl_core::lattice::SpinConfig;
    use stoqrl_core::rng::Rng;

    #[test]
    fn round_trip_preserves_outputs_bit_exactly() {
        let lat = Lattice::torus(3).unwrap();
        let model =
            StoquasticModel::new(ModelKind::Ising { j: 0.32758, h: 1.0 }, lat.clone()).unwrap();
        let mut net = QNetwork::new(&lat, 2, 5, 123).unwrap();
        // Give the zero head some content.
        let mut rng = Rng::new(9);
        for w in &mut net.layers.last_mut().unwrap().weights {
            *w = rng.uniform() - 0.5;
        }
        let dir = std::env::temp_dir().join(format!("sqck-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.ckpt");
        save_checkpoint(
            &path,
            &net,
            &model,
            TrainFormulation::DiscreteTerminal,
            2,
            5,
            -9.5,
            321,
        )
        .unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.header.episode, 321);
        assert_eq!(loaded.header.e0_estimate, -9.5);
        let s = SpinConfig::from_bits(0b101_110_011, 9);
        assert_eq!(net.forward(s), loaded.net.forward(s));
        let rebuilt = loaded.model().unwrap();
        assert_eq!(rebuilt.kind(), model.kind());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = std::env::temp_dir().join(format!("sqck-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(NeuralError::Checkpoint(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
