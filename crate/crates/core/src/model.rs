//! Parameter inventory, initialization, and the binary tensor container
//! used for checkpoints and training state.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use docrel_tensor::{ParamId, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::Vocab;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::schema::RelationSchema;

/// Sizes that come from data rather than configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    /// Relation classes including the null class.
    pub num_classes: usize,
    pub num_tags: usize,
}

impl ModelDims {
    pub fn new(vocab: &Vocab, schema: &RelationSchema) -> Self {
        ModelDims {
            vocab_size: vocab.len(),
            num_classes: schema.num_classes(),
            num_tags: schema.num_tag_classes(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in `±sqrt(3 / fan_in)`, i.e. variance `1 / fan_in`.
    FanIn(usize),
    /// Normal with variance 0.01.
    Embedding,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub q_w: ParamId,
    pub q_b: ParamId,
    pub k_w: ParamId,
    pub k_b: ParamId,
    pub v_w: ParamId,
    pub v_b: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvIds {
    pub kernel0: ParamId,
    pub bias0: ParamId,
    pub kernel1: ParamId,
    pub bias1: ParamId,
    pub kernel2: ParamId,
    pub bias2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockIds {
    pub attention: AttentionIds,
    pub conv: ConvIds,
    pub post_norm: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpIds {
    pub w0: ParamId,
    pub b0: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
}

#[derive(Debug, Clone)]
pub struct ParamIds {
    pub token: ParamId,
    pub position: ParamId,
    pub position_fallback: ParamId,
    pub blocks: Vec<BlockIds>,
    pub head: MlpIds,
    pub tail: MlpIds,
    /// `[d, classes * d]`: slice `l` occupies columns `l*d..(l+1)*d`.
    pub relation: ParamId,
    /// `[d, tags]`.
    pub ner: ParamId,
}

pub const CONV_WIDTHS: [usize; 3] = [1, 5, 1];

fn specs(config: &ModelConfig, dims: &ModelDims) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.d;
    let wide = config.conv_multiplier * d;
    let mut out: Vec<(String, Vec<usize>, Init)> = vec![
        (
            "embed.token".into(),
            vec![dims.vocab_size, d],
            Init::Embedding,
        ),
        (
            "embed.position".into(),
            vec![config.max_positions, d],
            Init::Embedding,
        ),
        (
            "embed.position_fallback".into(),
            vec![1, d],
            Init::Embedding,
        ),
    ];
    for k in 0..config.blocks {
        let p = |s: &str| format!("block{k}.{s}");
        for name in ["query", "key", "value"] {
            out.push((
                p(&format!("attention.{name}.weight")),
                vec![d, d],
                Init::FanIn(d),
            ));
            out.push((p(&format!("attention.{name}.bias")), vec![d], Init::Zeros));
        }
        out.push((p("attention.norm.gain"), vec![d], Init::Ones));
        out.push((p("attention.norm.bias"), vec![d], Init::Zeros));
        let channels = [(d, wide), (wide, wide), (wide, d)];
        for (i, (&w, &(cin, cout))) in CONV_WIDTHS.iter().zip(&channels).enumerate() {
            out.push((
                p(&format!("conv{i}.kernel")),
                vec![w, cin, cout],
                Init::FanIn(w * cin),
            ));
            out.push((p(&format!("conv{i}.bias")), vec![cout], Init::Zeros));
        }
        if config.post_conv_norm {
            out.push((p("post_norm.gain"), vec![d], Init::Ones));
            out.push((p("post_norm.bias"), vec![d], Init::Zeros));
        }
    }
    for side in ["head", "tail"] {
        out.push((format!("{side}.w0"), vec![d, d], Init::FanIn(d)));
        out.push((format!("{side}.b0"), vec![d], Init::Zeros));
        out.push((format!("{side}.w1"), vec![d, d], Init::FanIn(d)));
        out.push((format!("{side}.b1"), vec![d], Init::Zeros));
    }
    out.push((
        "relation".into(),
        vec![d, dims.num_classes * d],
        Init::FanIn(d),
    ));
    out.push(("ner".into(), vec![d, dims.num_tags], Init::FanIn(d)));
    out
}

fn resolve_ids(store: &ParamStore, config: &ModelConfig) -> ParamIds {
    let id = |name: String| {
        store
            .lookup(&name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    };
    let blocks = (0..config.blocks)
        .map(|k| {
            let p = |s: &str| format!("block{k}.{s}");
            BlockIds {
                attention: AttentionIds {
                    q_w: id(p("attention.query.weight")),
                    q_b: id(p("attention.query.bias")),
                    k_w: id(p("attention.key.weight")),
                    k_b: id(p("attention.key.bias")),
                    v_w: id(p("attention.value.weight")),
                    v_b: id(p("attention.value.bias")),
                    ln_gain: id(p("attention.norm.gain")),
                    ln_bias: id(p("attention.norm.bias")),
                },
                conv: ConvIds {
                    kernel0: id(p("conv0.kernel")),
                    bias0: id(p("conv0.bias")),
                    kernel1: id(p("conv1.kernel")),
                    bias1: id(p("conv1.bias")),
                    kernel2: id(p("conv2.kernel")),
                    bias2: id(p("conv2.bias")),
                },
                post_norm: config
                    .post_conv_norm
                    .then(|| (id(p("post_norm.gain")), id(p("post_norm.bias")))),
            }
        })
        .collect();
    let mlp = |side: &str| MlpIds {
        w0: id(format!("{side}.w0")),
        b0: id(format!("{side}.b0")),
        w1: id(format!("{side}.w1")),
        b1: id(format!("{side}.b1")),
    };
    ParamIds {
        token: id("embed.token".into()),
        position: id("embed.position".into()),
        position_fallback: id("embed.position_fallback".into()),
        blocks,
        head: mlp("head"),
        tail: mlp("tail"),
        relation: id("relation".into()),
        ner: id("ner".into()),
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub store: ParamStore,
    pub ids: ParamIds,
}

impl Model {
    pub fn init(config: ModelConfig, dims: ModelDims, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in specs(&config, &dims) {
            let t = match init {
                Init::FanIn(fan_in) => {
                    Tensor::uniform(&shape, (3.0 / fan_in as f64).sqrt(), &mut rng)
                }
                Init::Embedding => Tensor::normal(&shape, 0.1, &mut rng),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::filled(&shape, 1.0),
            };
            store.add(name, t);
        }
        let ids = resolve_ids(&store, &config);
        Ok(Model {
            config,
            dims,
            store,
            ids,
        })
    }

    /// Rebuilds a model from named tensors, checking every name and shape.
    pub fn from_tensors(
        config: ModelConfig,
        dims: ModelDims,
        mut tensors: Vec<(String, Tensor)>,
    ) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        for (name, shape, _) in specs(&config, &dims) {
            let pos = tensors
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing parameter {name}")))?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(Error::Data(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            store.add(name, t);
        }
        if let Some((extra, _)) = tensors.first() {
            return Err(Error::Data(format!(
                "checkpoint has unexpected parameter {extra}"
            )));
        }
        let ids = resolve_ids(&store, &config);
        Ok(Model {
            config,
            dims,
            store,
            ids,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.store
            .iter()
            .map(|(_, n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    /// Copies vectors for vocabulary tokens from `token v1 .. vd` lines.
    /// Tokens absent from the file keep their random initialization.
    /// Returns how many rows were replaced.
    pub fn import_embeddings(
        &mut self,
        vocab: &Vocab,
        input: impl BufRead,
        context: &str,
    ) -> Result<usize> {
        let d = self.config.d;
        let table = self.store.get_mut(self.ids.token);
        let mut replaced = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(context, e))?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(context, i + 1, format!("bad vector value: {e}")))?;
            if values.len() != d {
                // word2vec text files start with a "count dim" header line
                if i == 0 && values.len() == 1 {
                    continue;
                }
                return Err(Error::parse(
                    context,
                    i + 1,
                    format!("vector has {} values, model width is {d}", values.len()),
                ));
            }
            if let Some(id) = vocab.id(token) {
                table.row_mut(id).copy_from_slice(&values);
                replaced += 1;
            }
        }
        Ok(replaced)
    }
}

const MAGIC: &[u8; 8] = b"DOCRELT\0";
const FORMAT_VERSION: u32 = 1;

/// Writes a JSON header followed by named f64 tensors (little endian).
pub fn write_container(
    out: &mut impl Write,
    header: &serde_json::Value,
    tensors: &[(String, Tensor)],
) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(header).expect("header serializes");
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &s in t.shape() {
            out.write_all(&(s as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize>(input: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    input.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_container(
    input: &mut impl Read,
    context: &str,
) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let io = |e| Error::io(context, e);
    let magic: [u8; 8] = read_array(input).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("{context}: not a docrel tensor file")));
    }
    let version = u32::from_le_bytes(read_array(input).map_err(io)?);
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{context}: unsupported format version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(read_array(input).map_err(io)?) as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header).map_err(io)?;
    let header: serde_json::Value = serde_json::from_slice(&header)?;
    let count = u64::from_le_bytes(read_array(input).map_err(io)?) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_array(input).map_err(io)?) as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Data(format!("{context}: bad tensor name")))?;
        let rank = u32::from_le_bytes(read_array(input).map_err(io)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_array(input).map_err(io)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_array(input).map_err(io)?));
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok((header, tensors))
}

/// A trained model bundled with everything needed to apply it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub schema: RelationSchema,
    pub vocab: Vocab,
    /// Per-relation decision thresholds tuned on dev.
    pub thresholds: Option<std::collections::BTreeMap<String, f64>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    model: ModelConfig,
    dims: ModelDims,
    schema: String,
    vocab: String,
    thresholds: Option<std::collections::BTreeMap<String, f64>>,
}

impl Checkpoint {
    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        let header = CheckpointHeader {
            kind: "checkpoint".into(),
            model: self.model.config.clone(),
            dims: self.model.dims,
            schema: self.schema.to_toml(),
            vocab: self.vocab.to_text(),
            thresholds: self.thresholds.clone(),
        };
        let header = serde_json::to_value(header).expect("header serializes");
        write_container(out, &header, &self.model.named_tensors())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory succeeds");
        buf
    }

    pub fn read(input: &mut impl Read, context: &str) -> Result<Checkpoint> {
        let (header, tensors) = read_container(input, context)?;
        let header: CheckpointHeader = serde_json::from_value(header)?;
        if header.kind != "checkpoint" {
            return Err(Error::Data(format!(
                "{context}: expected a checkpoint, found {}",
                header.kind
            )));
        }
        let schema = RelationSchema::from_toml(&header.schema)?;
        let vocab = Vocab::from_text(&header.vocab)?;
        if ModelDims::new(&vocab, &schema) != header.dims {
            return Err(Error::Data(format!(
                "{context}: dimensions disagree with vocabulary or schema"
            )));
        }
        let model = Model::from_tensors(header.model, header.dims, tensors)?;
        Ok(Checkpoint {
            model,
            schema,
            vocab,
            thresholds: header.thresholds,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read(&mut bytes.as_slice(), &path.display().to_string())
    }
}
