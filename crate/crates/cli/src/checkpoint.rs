//! Binary model container.
//!
//! Layout: the 7-byte magic `HERMIT1`, the header length as a little-endian
//! `u64`, a JSON header, then a payload of little-endian `f64`s. The header
//! carries everything small (config, split, registry, normalizer) plus a
//! manifest mapping each tensor name to its byte offset in the payload and its
//! shape. Forests are flattened into five parallel node arrays.

use std::io::{Read, Write};
use std::path::Path;

use hermit_core::{
    EdgeNormalizer, ForestModel, HermitModel, Matrix, ModelState, NodeHistory, NodeHistoryStats, NodeRegistry, PipelineConfig,
    RegressionTree, SplitRanges, TrainHistory, TreeNode,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 7] = b"HERMIT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Byte offset from the start of the payload.
    pub offset: u64,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub split: SplitRanges,
    pub n_nodes: usize,
    pub registry: NodeRegistry,
    pub normalizer: EdgeNormalizer,
    pub history_global: NodeHistoryStats,
    pub history_observed: Vec<bool>,
    pub train_history: TrainHistory,
    pub last_time: Option<usize>,
    pub forest: ForestLayout,
    pub baseline: Option<ForestLayout>,
    pub tensors: Vec<TensorEntry>,
}

/// Shape of a flattened forest: tree `i` owns the next `tree_sizes[i]` nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestLayout {
    pub n_features: usize,
    pub tree_sizes: Vec<usize>,
}

#[derive(Default)]
struct PayloadWriter {
    manifest: Vec<TensorEntry>,
    data: Vec<f64>,
}

impl PayloadWriter {
    fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: impl IntoIterator<Item = f64>) {
        let offset = (self.data.len() * 8) as u64;
        let before = self.data.len();
        self.data.extend(values);
        debug_assert_eq!(self.data.len() - before, shape.iter().product::<usize>());
        self.manifest.push(TensorEntry { name: name.into(), offset, shape });
    }

    fn matrix(&mut self, name: impl Into<String>, m: &Matrix) {
        self.push(name, vec![m.rows, m.cols], m.data.iter().copied());
    }

    fn forest(&mut self, prefix: &str, f: &ForestModel) -> ForestLayout {
        let nodes: Vec<&TreeNode> = f.trees.iter().flat_map(|t| &t.nodes).collect();
        let n = nodes.len();
        let field = |pick: &dyn Fn(&TreeNode) -> f64| nodes.iter().map(|nd| pick(nd)).collect::<Vec<f64>>();
        let feature = field(&|nd| match nd {
            TreeNode::Split { feature, .. } => *feature as f64,
            TreeNode::Leaf { .. } => -1.0,
        });
        let threshold = field(&|nd| match nd {
            TreeNode::Split { threshold, .. } => *threshold,
            TreeNode::Leaf { .. } => 0.0,
        });
        let left = field(&|nd| match nd {
            TreeNode::Split { left, .. } => *left as f64,
            TreeNode::Leaf { .. } => -1.0,
        });
        let right = field(&|nd| match nd {
            TreeNode::Split { right, .. } => *right as f64,
            TreeNode::Leaf { .. } => -1.0,
        });
        let value = field(&|nd| match nd {
            TreeNode::Split { .. } => 0.0,
            TreeNode::Leaf { value } => *value,
        });
        for (name, v) in [("feature", feature), ("threshold", threshold), ("left", left), ("right", right), ("value", value)]
        {
            self.push(format!("{prefix}.{name}"), vec![n], v);
        }
        ForestLayout { n_features: f.n_features, tree_sizes: f.trees.iter().map(|t| t.nodes.len()).collect() }
    }
}

/// Serializes a fitted model.
pub fn to_bytes(model: &HermitModel) -> Result<Vec<u8>> {
    let mut p = PayloadWriter::default();
    for (name, _, m) in model.encoder.params.tensors() {
        p.matrix(format!("encoder.{name}"), m);
    }
    p.matrix("encoder.hidden", &model.encoder.hidden);
    for (k, h) in model.hidden_states.iter().enumerate() {
        p.matrix(format!("hidden_states.{k}"), h);
    }
    let stats = &model.history.stats;
    p.push(
        "history.stats",
        vec![stats.len(), 2],
        stats.iter().flat_map(|s| [s.mean_log_rtt, s.std_log_rtt]),
    );
    let forest = p.forest("forest", &model.forest);
    let baseline = model.baseline.as_ref().map(|b| p.forest("baseline", b));

    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        split: model.split.clone(),
        n_nodes: model.n_nodes(),
        registry: model.registry.clone(),
        normalizer: model.normalizer,
        history_global: model.history.global,
        history_observed: model.history.observed.clone(),
        train_history: model.train_history.clone(),
        last_time: model.encoder.last_time,
        forest,
        baseline,
        tensors: p.manifest,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + p.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &p.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Payload<'a> {
    bytes: &'a [u8],
    manifest: &'a [TensorEntry],
    next: usize,
}

impl Payload<'_> {
    /// Next tensor in manifest order, checked against the expected name.
    fn take(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let entry = self
            .manifest
            .get(self.next)
            .ok_or_else(|| CliError::Checkpoint(format!("manifest ends before `{name}`")))?;
        if entry.name != name {
            return Err(CliError::Checkpoint(format!("expected tensor `{name}`, found `{}`", entry.name)));
        }
        self.next += 1;
        let start = usize::try_from(entry.offset).map_err(|_| CliError::Checkpoint("offset overflow".into()))?;
        let end = start + entry.len() * 8;
        let raw = self
            .bytes
            .get(start..end)
            .ok_or_else(|| CliError::Checkpoint(format!("tensor `{name}` runs past the payload")))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok((entry.shape.clone(), data))
    }

    fn matrix_into(&mut self, name: &str, dst: &mut Matrix) -> Result<()> {
        let (shape, data) = self.take(name)?;
        if shape != [dst.rows, dst.cols] {
            return Err(CliError::Checkpoint(format!(
                "tensor `{name}` has shape {shape:?}, expected [{}, {}]",
                dst.rows, dst.cols
            )));
        }
        dst.data = data;
        Ok(())
    }

    fn matrix(&mut self, name: &str) -> Result<Matrix> {
        let (shape, data) = self.take(name)?;
        match shape[..] {
            [r, c] => Ok(Matrix::from_vec(r, c, data)),
            _ => Err(CliError::Checkpoint(format!("tensor `{name}` is not a matrix"))),
        }
    }

    fn forest(&mut self, prefix: &str, layout: &ForestLayout) -> Result<ForestModel> {
        let mut cols = Vec::with_capacity(5);
        for name in ["feature", "threshold", "left", "right", "value"] {
            cols.push(self.take(&format!("{prefix}.{name}"))?.1);
        }
        let total: usize = layout.tree_sizes.iter().sum();
        if cols.iter().any(|c| c.len() != total) {
            return Err(CliError::Checkpoint(format!("{prefix} node arrays disagree with the tree sizes")));
        }
        let index = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(CliError::Checkpoint(format!("{prefix}: bad node index {v}")))
            }
        };
        let mut trees = Vec::with_capacity(layout.tree_sizes.len());
        let mut at = 0;
        for &size in &layout.tree_sizes {
            let mut nodes = Vec::with_capacity(size);
            for i in at..at + size {
                nodes.push(if cols[0][i] < 0.0 {
                    TreeNode::Leaf { value: cols[4][i] }
                } else {
                    let (left, right) = (index(cols[2][i])?, index(cols[3][i])?);
                    if left >= size || right >= size {
                        return Err(CliError::Checkpoint(format!("{prefix}: child index out of range")));
                    }
                    TreeNode::Split { feature: index(cols[0][i])?, threshold: cols[1][i], left, right }
                });
            }
            trees.push(RegressionTree { nodes });
            at += size;
        }
        Ok(ForestModel { trees, n_features: layout.n_features })
    }
}

/// Reads the header and payload and rebuilds the model.
pub fn from_bytes(bytes: &[u8]) -> Result<HermitModel> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CliError::Version("missing HERMIT1 magic".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    let len_bytes: [u8; 8] =
        rest.get(..8).and_then(|b| b.try_into().ok()).ok_or_else(|| CliError::Checkpoint("truncated header".into()))?;
    let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| CliError::Checkpoint("header length overflow".into()))?;
    let json = rest.get(8..8 + header_len).ok_or_else(|| CliError::Checkpoint("truncated header".into()))?;
    let version: VersionProbe = serde_json::from_slice(json).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    if version.format_version != FORMAT_VERSION {
        return Err(CliError::Version(format!(
            "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
            version.format_version
        )));
    }
    let header: Header = serde_json::from_slice(json).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    check_manifest(&header.tensors)?;

    let mut p = Payload { bytes: &rest[8 + header_len..], manifest: &header.tensors, next: 0 };
    let mut encoder = ModelState::new(header.config.model.clone(), header.n_nodes)?;
    let names: Vec<String> = encoder.params.tensors().into_iter().map(|(n, _, _)| n).collect();
    for (name, dst) in names.iter().zip(encoder.params.tensors_mut()) {
        p.matrix_into(&format!("encoder.{name}"), dst)?;
    }
    p.matrix_into("encoder.hidden", &mut encoder.hidden)?;
    encoder.last_time = header.last_time;

    let n_states = header.tensors.iter().filter(|t| t.name.starts_with("hidden_states.")).count();
    let hidden_states = (0..n_states).map(|k| p.matrix(&format!("hidden_states.{k}"))).collect::<Result<Vec<_>>>()?;

    let (shape, flat) = p.take("history.stats")?;
    if shape.len() != 2 || shape[1] != 2 {
        return Err(CliError::Checkpoint("history.stats must have shape [n, 2]".into()));
    }
    let stats = flat.chunks_exact(2).map(|c| NodeHistoryStats { mean_log_rtt: c[0], std_log_rtt: c[1] }).collect();
    let history = NodeHistory { stats, global: header.history_global, observed: header.history_observed };

    let forest = p.forest("forest", &header.forest)?;
    let baseline = header.baseline.as_ref().map(|l| p.forest("baseline", l)).transpose()?;
    if p.next != header.tensors.len() {
        return Err(CliError::Checkpoint("manifest lists unread tensors".into()));
    }

    Ok(HermitModel {
        config: header.config,
        split: header.split,
        registry: header.registry,
        encoder,
        normalizer: header.normalizer,
        history,
        forest,
        baseline,
        hidden_states,
        train_history: header.train_history,
    })
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

/// Offsets must be 8-byte aligned, increasing and non-overlapping.
fn check_manifest(manifest: &[TensorEntry]) -> Result<()> {
    let mut end = 0u64;
    for t in manifest {
        if t.offset % 8 != 0 || t.offset < end {
            return Err(CliError::Checkpoint(format!("tensor `{}` overlaps or is misaligned", t.name)));
        }
        end = t.offset + 8 * t.len() as u64;
    }
    Ok(())
}

pub fn save(model: &HermitModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<HermitModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| CliError::io(path, e))?;
    from_bytes(&bytes)
}
