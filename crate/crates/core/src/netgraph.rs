//! Symbolic graphs of the three densely connected FCN variants: shapes,
//! channel arithmetic and trainable-parameter counts. No tensors are
//! allocated.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Concatenating skips, plain up-path dense blocks.
    A,
    /// Projected additive skips, residual up-path dense blocks.
    B,
    /// B with a multi-kernel first layer.
    C,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            other => Err(Error::arg(format!("unknown variant {other:?}; expected A, B or C"))),
        }
    }
}

pub const DROPOUT_RATE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub variant: Variant,
    /// Growth rate.
    pub k: usize,
    /// Feature maps of the first layer.
    pub f: usize,
    /// Number of pooling steps.
    pub p: usize,
    pub layers_down: Vec<usize>,
    pub layers_bottleneck: usize,
    /// Up-path blocks, from the lowest resolution upwards.
    pub layers_up: Vec<usize>,
    /// `(C, H, W)`.
    pub input: (usize, usize, usize),
    pub classes: usize,
    /// 3x3 : 5x5 : 7x7 branch ratio of the first layer of variant C.
    pub ratio: [usize; 3],
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            variant: Variant::C,
            k: 12,
            f: 36,
            p: 3,
            layers_down: vec![4; 3],
            layers_bottleneck: 4,
            layers_up: vec![4; 3],
            input: (1, 128, 128),
            classes: 4,
            ratio: [2, 1, 1],
        }
    }
}

impl NetConfig {
    /// Same topology with a new pooling count and uniform block depth.
    pub fn with_depth(mut self, p: usize, layers: usize) -> Self {
        self.p = p;
        self.layers_down = vec![layers; p];
        self.layers_bottleneck = layers;
        self.layers_up = vec![layers; p];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 || self.f == 0 || self.p == 0 || self.classes == 0 {
            return bad("k, f, p and classes must all be >= 1".into());
        }
        if self.layers_down.len() != self.p || self.layers_up.len() != self.p {
            return bad(format!(
                "need {} down and up block depths, got {} and {}",
                self.p,
                self.layers_down.len(),
                self.layers_up.len()
            ));
        }
        if self.layers_down.iter().chain(&self.layers_up).any(|&l| l == 0) || self.layers_bottleneck == 0 {
            return bad("every dense block needs at least one layer".into());
        }
        if self.input.0 == 0 || self.input.1 == 0 || self.input.2 == 0 {
            return bad("input shape must be positive".into());
        }
        if self.variant == Variant::C {
            if self.ratio.contains(&0) {
                return bad("inception ratio entries must be >= 1".into());
            }
            if inception_split(self.f, self.ratio).contains(&0) {
                return bad(format!("f = {} is too small for ratio {:?}", self.f, self.ratio));
            }
        }
        Ok(())
    }
}

/// Branch widths proportional to `ratio`, rounded down, with the remainder
/// given to the first branch.
pub fn inception_split(f: usize, ratio: [usize; 3]) -> [usize; 3] {
    let total: usize = ratio.iter().sum();
    let mut out = ratio.map(|r| f * r / total);
    out[0] += f - out.iter().sum::<usize>();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Input,
    Conv {
        kernel: usize,
        cin: usize,
        cout: usize,
    },
    TransposedConv {
        kernel: usize,
        stride: usize,
        cin: usize,
        cout: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Elu,
    Dropout {
        rate: f64,
    },
    MaxPool,
    Concat,
    Add,
    Softmax,
}

impl Op {
    pub fn params(&self) -> u64 {
        match *self {
            Op::Conv { kernel, cin, cout } | Op::TransposedConv { kernel, cin, cout, .. } => {
                (kernel * kernel * cin * cout + cout) as u64
            }
            Op::BatchNorm { channels } => 2 * channels as u64,
            _ => 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv { .. } => "conv",
            Op::TransposedConv { .. } => "tconv",
            Op::BatchNorm { .. } => "bn",
            Op::Elu => "elu",
            Op::Dropout { .. } => "dropout",
            Op::MaxPool => "maxpool",
            Op::Concat => "concat",
            Op::Add => "add",
            Op::Softmax => "softmax",
        }
    }
}

pub type Shape = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
    pub shape: Shape,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetGraph {
    pub config: NetConfig,
    /// Topologically ordered: every input index is smaller than its node's.
    pub nodes: Vec<GraphNode>,
}

fn infer(op: &Op, ins: &[Shape], name: &str) -> std::result::Result<Shape, String> {
    let one = || ins.first().copied().ok_or_else(|| format!("{name} has no input"));
    match *op {
        Op::Input => Err("input nodes have no producer".into()),
        Op::Conv { cin, cout, .. } => {
            let (c, h, w) = one()?;
            if c != cin {
                return Err(format!("expects {cin} channels, got {c}"));
            }
            Ok((cout, h, w))
        }
        Op::TransposedConv { cin, cout, stride, .. } => {
            let (c, h, w) = one()?;
            if c != cin {
                return Err(format!("expects {cin} channels, got {c}"));
            }
            Ok((cout, h * stride, w * stride))
        }
        Op::BatchNorm { channels } => {
            let s = one()?;
            if s.0 != channels {
                return Err(format!("expects {channels} channels, got {}", s.0));
            }
            Ok(s)
        }
        Op::Elu | Op::Dropout { .. } | Op::Softmax => one(),
        Op::MaxPool => {
            let (c, h, w) = one()?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(format!("cannot pool odd spatial size {h}x{w}"));
            }
            Ok((c, h / 2, w / 2))
        }
        Op::Concat => {
            let (_, h, w) = one()?;
            if ins.iter().any(|s| (s.1, s.2) != (h, w)) {
                return Err(format!("concat inputs disagree in spatial size: {ins:?}"));
            }
            Ok((ins.iter().map(|s| s.0).sum(), h, w))
        }
        Op::Add => {
            let s = one()?;
            if ins.len() < 2 || ins.iter().any(|t| *t != s) {
                return Err(format!("add inputs must match exactly: {ins:?}"));
            }
            Ok(s)
        }
    }
}

struct Builder {
    nodes: Vec<GraphNode>,
}

impl Builder {
    fn push(&mut self, name: impl Into<String>, op: Op, inputs: Vec<usize>) -> Result<usize> {
        let name = name.into();
        let ins: Vec<Shape> = inputs.iter().map(|&i| self.nodes[i].shape).collect();
        let shape = infer(&op, &ins, &name).map_err(|message| Error::Build {
            node: name.clone(),
            message,
        })?;
        let params = op.params();
        self.nodes.push(GraphNode {
            name,
            op,
            inputs,
            shape,
            params,
        });
        Ok(self.nodes.len() - 1)
    }

    fn channels(&self, id: usize) -> usize {
        self.nodes[id].shape.0
    }

    /// BN -> ELU -> conv -> dropout.
    fn composite(&mut self, prefix: &str, x: usize, kernel: usize, cout: usize) -> Result<usize> {
        let c = self.channels(x);
        let bn = self.push(format!("{prefix}/bn"), Op::BatchNorm { channels: c }, vec![x])?;
        let act = self.push(format!("{prefix}/elu"), Op::Elu, vec![bn])?;
        let conv = self.push(
            format!("{prefix}/conv{kernel}x{kernel}"),
            Op::Conv { kernel, cin: c, cout },
            vec![act],
        )?;
        self.push(
            format!("{prefix}/dropout"),
            Op::Dropout { rate: DROPOUT_RATE },
            vec![conv],
        )
    }

    /// Dense block; returns (concatenation of input and new maps, new maps only).
    fn dense_block(&mut self, prefix: &str, x: usize, layers: usize, k: usize) -> Result<(usize, usize)> {
        let mut feed = x;
        let mut new_maps = Vec::with_capacity(layers);
        for l in 0..layers {
            let out = self.composite(&format!("{prefix}/layer{l}"), feed, 3, k)?;
            new_maps.push(out);
            let mut parts = vec![x];
            parts.extend(&new_maps);
            if l + 1 < layers {
                feed = self.push(format!("{prefix}/concat{l}"), Op::Concat, parts)?;
            }
        }
        let new_only = if new_maps.len() == 1 {
            new_maps[0]
        } else {
            self.push(format!("{prefix}/new"), Op::Concat, new_maps.clone())?
        };
        let mut all = vec![x];
        all.extend(&new_maps);
        let full = self.push(format!("{prefix}/out"), Op::Concat, all)?;
        Ok((full, new_only))
    }

    /// Dense block whose new maps are added to a projection of its input.
    fn residual_block(&mut self, prefix: &str, x: usize, layers: usize, k: usize) -> Result<usize> {
        let (_, new_only) = self.dense_block(prefix, x, layers, k)?;
        let proj = self.composite(&format!("{prefix}/proj"), x, 1, layers * k)?;
        self.push(format!("{prefix}/add"), Op::Add, vec![new_only, proj])
    }
}

pub fn build_graph(cfg: &NetConfig) -> Result<NetGraph> {
    cfg.validate()?;
    let mut b = Builder { nodes: Vec::new() };
    let (c0, h0, w0) = cfg.input;
    b.nodes.push(GraphNode {
        name: "input".into(),
        op: Op::Input,
        inputs: vec![],
        shape: (c0, h0, w0),
        params: 0,
    });
    let k = cfg.k;

    let mut x = match cfg.variant {
        Variant::A | Variant::B => b.push(
            "stem/conv3x3",
            Op::Conv {
                kernel: 3,
                cin: c0,
                cout: cfg.f,
            },
            vec![0],
        )?,
        Variant::C => {
            let widths = inception_split(cfg.f, cfg.ratio);
            let branches = [3, 5, 7]
                .iter()
                .zip(widths)
                .map(|(&kernel, cout)| {
                    b.push(
                        format!("stem/conv{kernel}x{kernel}"),
                        Op::Conv { kernel, cin: c0, cout },
                        vec![0],
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            b.push("stem/concat", Op::Concat, branches)?
        }
    };

    let mut skips = Vec::with_capacity(cfg.p);
    for (i, &layers) in cfg.layers_down.iter().enumerate() {
        let (full, _) = b.dense_block(&format!("down{i}/db"), x, layers, k)?;
        skips.push(full);
        let c = b.channels(full);
        let td = b.composite(&format!("down{i}/td"), full, 1, c)?;
        x = b.push(format!("down{i}/td/maxpool"), Op::MaxPool, vec![td])?;
    }

    x = match cfg.variant {
        Variant::A => b.dense_block("bottleneck", x, cfg.layers_bottleneck, k)?.1,
        Variant::B | Variant::C => b.residual_block("bottleneck", x, cfg.layers_bottleneck, k)?,
    };

    for (j, &layers) in cfg.layers_up.iter().enumerate() {
        let level = cfg.p - 1 - j;
        let prefix = format!("up{level}");
        let c = b.channels(x);
        let tu = b.push(
            format!("{prefix}/tu"),
            Op::TransposedConv {
                kernel: 3,
                stride: 2,
                cin: c,
                cout: c,
            },
            vec![x],
        )?;
        let skip = skips[level];
        let last = j + 1 == cfg.layers_up.len();
        x = match cfg.variant {
            Variant::A => {
                let joined = b.push(format!("{prefix}/skip/concat"), Op::Concat, vec![tu, skip])?;
                let (full, new_only) = b.dense_block(&format!("{prefix}/db"), joined, layers, k)?;
                if last {
                    full
                } else {
                    new_only
                }
            }
            Variant::B | Variant::C => {
                let proj = b.composite(&format!("{prefix}/skip/proj"), skip, 1, c)?;
                let joined = b.push(format!("{prefix}/skip/add"), Op::Add, vec![tu, proj])?;
                b.residual_block(&format!("{prefix}/db"), joined, layers, k)?
            }
        };
    }

    let c = b.channels(x);
    let head = b.push(
        "head/conv1x1",
        Op::Conv {
            kernel: 1,
            cin: c,
            cout: cfg.classes,
        },
        vec![x],
    )?;
    b.push("head/softmax", Op::Softmax, vec![head])?;
    Ok(NetGraph {
        config: cfg.clone(),
        nodes: b.nodes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: u64,
    /// `(node name, params)` for nodes with parameters.
    pub per_node: Vec<(String, u64)>,
}

pub fn param_count(g: &NetGraph) -> ParamCount {
    ParamCount {
        total: g.nodes.iter().map(|n| n.params).sum(),
        per_node: g
            .nodes
            .iter()
            .filter(|n| n.params > 0)
            .map(|n| (n.name.clone(), n.params))
            .collect(),
    }
}

/// Re-derives every node shape for a new input shape.
pub fn shape_trace(g: &NetGraph, input: Shape) -> Result<Vec<(String, Shape)>> {
    let factor = 1usize << g.config.p;
    if !input.1.is_multiple_of(factor) || !input.2.is_multiple_of(factor) {
        return Err(Error::Trace(format!(
            "input {}x{} is not divisible by 2^{} = {factor}",
            input.1, input.2, g.config.p
        )));
    }
    if input.0 != g.config.input.0 {
        return Err(Error::Trace(format!(
            "graph expects {} input channels, got {}",
            g.config.input.0, input.0
        )));
    }
    let mut shapes: Vec<Shape> = Vec::with_capacity(g.nodes.len());
    for n in &g.nodes {
        let s = if n.op == Op::Input {
            input
        } else {
            let ins: Vec<Shape> = n.inputs.iter().map(|&i| shapes[i]).collect();
            infer(&n.op, &ins, &n.name).map_err(|m| Error::Trace(format!("{}: {m}", n.name)))?
        };
        shapes.push(s);
    }
    Ok(g.nodes.iter().map(|n| n.name.clone()).zip(shapes).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    /// `params ~ a k^2 + b k + c`.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r2: f64,
}

fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Least-squares quadratic through `(x, y)` points.
pub fn fit_quadratic(points: &[(f64, f64)]) -> Option<QuadraticFit> {
    if points.len() < 3 {
        return None;
    }
    let mut s = [0.0f64; 5];
    let mut t = [0.0f64; 3];
    for &(x, y) in points {
        let mut p = 1.0;
        for (i, si) in s.iter_mut().enumerate() {
            *si += p;
            if i < 3 {
                t[i] += p * y;
            }
            p *= x;
        }
    }
    let [c, b, a] = solve3([
        [s[0], s[1], s[2], t[0]],
        [s[1], s[2], s[3], t[1]],
        [s[2], s[3], s[4], t[2]],
    ])?;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|&(x, y)| (y - (a * x * x + b * x + c)).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(QuadraticFit { a, b, c, r2 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSweep {
    /// `(k, total params)`.
    pub rows: Vec<(usize, u64)>,
    pub fit: Option<QuadraticFit>,
}

/// Parameter totals for each growth rate, with `f = 3k` tracking `k`.
pub fn growth_sweep(base: &NetConfig, ks: &[usize]) -> Result<GrowthSweep> {
    let rows = ks
        .iter()
        .map(|&k| {
            let cfg = NetConfig {
                k,
                f: 3 * k,
                ..base.clone()
            };
            Ok((k, param_count(&build_graph(&cfg)?).total))
        })
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|&(k, p)| (k as f64, p as f64)).collect();
    Ok(GrowthSweep {
        fit: fit_quadratic(&pts),
        rows,
    })
}

/// Published totals for growth rates 2 and 12.
pub const REFERENCE_PARAMS: [(usize, u64); 2] = [(2, 11_452), (12, 370_732)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub k: usize,
    pub reference: u64,
    pub computed: u64,
    /// `(computed - reference) / reference`.
    pub relative_deviation: f64,
}

pub fn calibration_report(base: &NetConfig) -> Result<Vec<CalibrationRow>> {
    REFERENCE_PARAMS
        .iter()
        .map(|&(k, reference)| {
            let cfg = NetConfig {
                k,
                f: 3 * k,
                ..base.clone()
            };
            let computed = param_count(&build_graph(&cfg)?).total;
            Ok(CalibrationRow {
                k,
                reference,
                computed,
                relative_deviation: (computed as f64 - reference as f64) / reference as f64,
            })
        })
        .collect()
}

pub fn format_calibration(rows: &[CalibrationRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "k={:<3} reference={:>9} computed={:>9} deviation={:+.2}%",
            r.k,
            r.reference,
            r.computed,
            100.0 * r.relative_deviation
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetReport {
    pub config: NetConfig,
    pub total_params: u64,
    pub output_shape: Shape,
    pub nodes: Vec<NodeSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub name: String,
    pub kind: String,
    pub shape: Shape,
    pub params: u64,
}

pub fn report(g: &NetGraph) -> NetReport {
    NetReport {
        config: g.config.clone(),
        total_params: param_count(g).total,
        output_shape: g.nodes.last().map_or((0, 0, 0), |n| n.shape),
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeSummary {
                name: n.name.clone(),
                kind: n.op.kind().into(),
                shape: n.shape,
                params: n.params,
            })
            .collect(),
    }
}

pub fn to_dot(g: &NetGraph) -> String {
    let mut s = String::from("digraph dfcn {\n  rankdir=TB;\n  node [shape=box, fontsize=10];\n");
    for (i, n) in g.nodes.iter().enumerate() {
        let (c, h, w) = n.shape;
        let _ = writeln!(
            s,
            "  n{i} [label=\"{}\\n{} {c}x{h}x{w}\\n{} params\"];",
            n.name,
            n.op.kind(),
            n.params
        );
    }
    for (i, n) in g.nodes.iter().enumerate() {
        for &j in &n.inputs {
            let _ = writeln!(s, "  n{j} -> n{i};");
        }
    }
    s.push_str("}\n");
    s
}
