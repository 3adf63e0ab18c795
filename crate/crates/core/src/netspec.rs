//! Network architecture descriptors and shape inference.
//!
//! Only shapes and filter counts are modelled; there is no convolution
//! arithmetic here. Layer indices are 0-based throughout. The character
//! segmentation table is conventionally numbered from 1, so its layer `k`
//! appears here as index `k - 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of anchor boxes used by every detection head shipped here.
pub const DEFAULT_ANCHORS: u32 = 5;

#[derive(Debug, Error, PartialEq)]
pub enum NetSpecError {
    #[error("class count and anchor count must be at least 1 (classes={classes}, anchors={anchors})")]
    ZeroHead { classes: u32, anchors: u32 },
    #[error("layer {layer}: spatial size collapsed to zero ({input} -> {width}x{height})")]
    Collapsed {
        layer: usize,
        input: TensorShape,
        width: u32,
        height: u32,
    },
    #[error("layer {layer}: {reason}")]
    BadLayer { layer: usize, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown architecture '{0}'")]
    Unknown(String),
}

/// Width x height x channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
}

impl TensorShape {
    pub const fn new(width: u32, height: u32, channels: u32) -> Self {
        Self {
            width,
            height,
            channels,
        }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

impl FromStr for TensorShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('x').collect();
        if parts.len() != 3 {
            return Err(format!("expected WxHxC, got '{s}'"));
        }
        let n = |p: &str| p.parse::<u32>().map_err(|_| format!("bad dimension '{p}' in '{s}'"));
        Ok(Self::new(n(parts[0])?, n(parts[1])?, n(parts[2])?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv { filters: u32, kernel: u32, stride: u32 },
    MaxPool { kernel: u32, stride: u32 },
    Detection,
}

impl LayerSpec {
    pub const fn conv(filters: u32, kernel: u32) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride: 1,
        }
    }

    pub const fn max(kernel: u32, stride: u32) -> Self {
        LayerSpec::MaxPool { kernel, stride }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "max",
            LayerSpec::Detection => "detection",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
            } => write!(f, "conv {filters} {kernel}x{kernel}/{stride}"),
            LayerSpec::MaxPool { kernel, stride } => write!(f, "max {kernel}x{kernel}/{stride}"),
            LayerSpec::Detection => f.write_str("detection"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub input: TensorShape,
    pub layers: Vec<LayerSpec>,
    pub classes: u32,
    pub anchors: u32,
    /// Expected output of the last shape-changing layer, when declared.
    pub output: Option<TensorShape>,
}

/// One row of a shape table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub index: usize,
    pub layer: LayerSpec,
    pub input: TensorShape,
    pub output: TensorShape,
}

/// Filters in a detection head: `(classes + 5) * anchors`.
pub fn required_filters(classes: u32, anchors: u32) -> Result<u32, NetSpecError> {
    if classes == 0 || anchors == 0 {
        return Err(NetSpecError::ZeroHead { classes, anchors });
    }
    Ok((classes + 5) * anchors)
}

fn layer_output(index: usize, layer: &LayerSpec, input: TensorShape) -> Result<TensorShape, NetSpecError> {
    match *layer {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
        } => {
            if kernel == 0 || filters == 0 {
                return Err(NetSpecError::BadLayer {
                    layer: index,
                    reason: "conv needs kernel >= 1 and filters >= 1".into(),
                });
            }
            if stride != 1 {
                return Err(NetSpecError::BadLayer {
                    layer: index,
                    reason: format!("conv stride {stride} unsupported (same-padded stride 1 only)"),
                });
            }
            Ok(TensorShape::new(input.width, input.height, filters))
        }
        LayerSpec::MaxPool { kernel, stride } => {
            if kernel == 0 || stride == 0 {
                return Err(NetSpecError::BadLayer {
                    layer: index,
                    reason: "maxpool needs kernel >= 1 and stride >= 1".into(),
                });
            }
            // stride 1 pools are same-padded
            let (width, height) = if stride == 1 {
                (input.width, input.height)
            } else {
                (input.width / stride, input.height / stride)
            };
            if width == 0 || height == 0 {
                return Err(NetSpecError::Collapsed {
                    layer: index,
                    input,
                    width,
                    height,
                });
            }
            Ok(TensorShape::new(width, height, input.channels))
        }
        LayerSpec::Detection => Ok(input),
    }
}

/// Propagates the input shape through every layer.
pub fn infer_shapes(arch: &ArchSpec) -> Result<Vec<LayerShape>, NetSpecError> {
    let mut current = arch.input;
    let mut rows = Vec::with_capacity(arch.layers.len());
    for (index, layer) in arch.layers.iter().enumerate() {
        let output = layer_output(index, layer, current)?;
        rows.push(LayerShape {
            index,
            layer: *layer,
            input: current,
            output,
        });
        current = output;
    }
    Ok(rows)
}

impl ArchSpec {
    /// Filter count of the last conv layer before the detection layer.
    pub fn head_filters(&self) -> Option<u32> {
        self.layers.iter().rev().find_map(|l| match l {
            LayerSpec::Conv { filters, .. } => Some(*filters),
            _ => None,
        })
    }

    pub fn final_shape(&self) -> Result<TensorShape, NetSpecError> {
        Ok(infer_shapes(self)?
            .last()
            .map(|r| r.output)
            .unwrap_or(self.input))
    }

    /// Line-oriented descriptor text; see [`parse_descriptor`].
    pub fn to_descriptor(&self) -> String {
        let mut out = format!(
            "name {} input {} classes {} anchors {}",
            self.name, self.input, self.classes, self.anchors
        );
        if let Some(o) = self.output {
            out.push_str(&format!(" output {o}"));
        }
        out.push('\n');
        for layer in &self.layers {
            out.push_str(&layer.to_string());
            out.push('\n');
        }
        out
    }

    /// Drops the first `n` layers, swaps the input, and re-heads for `classes`.
    pub fn truncated(&self, name: &str, n: usize, input: TensorShape, classes: u32) -> ArchSpec {
        let mut layers: Vec<LayerSpec> = self.layers[n..].to_vec();
        let head = required_filters(classes, self.anchors).unwrap_or(0);
        if let Some(LayerSpec::Conv { filters, .. }) = layers
            .iter_mut()
            .rev()
            .find(|l| matches!(l, LayerSpec::Conv { .. }))
        {
            *filters = head;
        }
        let mut out = ArchSpec {
            name: name.to_string(),
            input,
            layers,
            classes,
            anchors: self.anchors,
            output: None,
        };
        out.output = out.final_shape().ok();
        out
    }
}

fn parse_kernel(spec: &str) -> Option<(u32, u32)> {
    let (k, s) = spec.split_once('/')?;
    let (k1, k2) = k.split_once('x')?;
    if k1 != k2 {
        return None;
    }
    Some((k1.parse().ok()?, s.parse().ok()?))
}

/// Parses the descriptor format:
///
/// ```text
/// name <id> input <W>x<H>x<C> classes <C> anchors <A> [output <W>x<H>x<C>]
/// conv <filters> <k>x<k>/<s>
/// max <k>x<k>/<s>
/// detection
/// ```
///
/// Blank lines and `#` comments are ignored.
pub fn parse_descriptor(text: &str) -> Result<ArchSpec, NetSpecError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(NetSpecError::Parse {
        line: 1,
        reason: "empty descriptor".into(),
    })?;
    let perr = |line: usize, reason: String| NetSpecError::Parse { line, reason };

    let toks: Vec<&str> = header.split_whitespace().collect();
    if !toks.len().is_multiple_of(2) {
        return Err(perr(hline, "header must be key/value pairs".into()));
    }
    let (mut name, mut input, mut classes, mut anchors, mut output) = (None, None, None, None, None);
    for pair in toks.chunks(2) {
        let v = pair[1];
        match pair[0] {
            "name" => name = Some(v.to_string()),
            "input" => input = Some(v.parse::<TensorShape>().map_err(|e| perr(hline, e))?),
            "output" => output = Some(v.parse::<TensorShape>().map_err(|e| perr(hline, e))?),
            "classes" => {
                classes = Some(v.parse::<u32>().map_err(|_| perr(hline, format!("bad classes '{v}'")))?)
            }
            "anchors" => {
                anchors = Some(v.parse::<u32>().map_err(|_| perr(hline, format!("bad anchors '{v}'")))?)
            }
            other => return Err(perr(hline, format!("unknown header key '{other}'"))),
        }
    }
    let missing = |k: &str| perr(hline, format!("header missing '{k}'"));
    let mut arch = ArchSpec {
        name: name.ok_or_else(|| missing("name"))?,
        input: input.ok_or_else(|| missing("input"))?,
        layers: Vec::new(),
        classes: classes.ok_or_else(|| missing("classes"))?,
        anchors: anchors.ok_or_else(|| missing("anchors"))?,
        output,
    };

    for (lineno, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let layer = match toks.as_slice() {
            ["conv", filters, k] => {
                let filters = filters
                    .parse()
                    .map_err(|_| perr(lineno, format!("bad filter count '{filters}'")))?;
                let (kernel, stride) =
                    parse_kernel(k).ok_or_else(|| perr(lineno, format!("bad kernel '{k}'")))?;
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                }
            }
            ["max", k] => {
                let (kernel, stride) =
                    parse_kernel(k).ok_or_else(|| perr(lineno, format!("bad kernel '{k}'")))?;
                LayerSpec::MaxPool { kernel, stride }
            }
            ["detection"] => LayerSpec::Detection,
            _ => return Err(perr(lineno, format!("unrecognized layer '{line}'"))),
        };
        arch.layers.push(layer);
    }
    Ok(arch)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub layer: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layer {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub arch: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Cross-checks the head filter count, layer parameters and shape chain.
pub fn validate(arch: &ArchSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |layer: Option<usize>, message: String| violations.push(Violation { layer, message });

    let detections: Vec<usize> = arch
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Detection))
        .map(|(i, _)| i)
        .collect();
    match detections.as_slice() {
        [] => push(None, "no detection layer".into()),
        [i] if *i + 1 != arch.layers.len() => push(Some(*i), "detection layer must be last".into()),
        [_] => {}
        many => push(Some(many[1]), format!("{} detection layers, expected 1", many.len())),
    }

    for (i, layer) in arch.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
            } => {
                if filters == 0 || kernel == 0 {
                    push(Some(i), "conv needs kernel >= 1 and filters >= 1".into());
                }
                if stride != 1 {
                    push(Some(i), format!("conv stride {stride} unsupported, expected 1"));
                }
            }
            LayerSpec::MaxPool { kernel, stride } => {
                if kernel == 0 || stride == 0 {
                    push(Some(i), "maxpool needs kernel >= 1 and stride >= 1".into());
                }
            }
            LayerSpec::Detection => {}
        }
    }

    let head_index = arch
        .layers
        .iter()
        .rposition(|l| !matches!(l, LayerSpec::Detection));
    match (required_filters(arch.classes, arch.anchors), head_index) {
        (Err(e), _) => push(None, e.to_string()),
        (Ok(_), None) => push(None, "no layers before the detection head".into()),
        (Ok(expected), Some(h)) => match arch.layers[h] {
            LayerSpec::Conv { filters, .. } if filters != expected => push(
                Some(h),
                format!(
                    "head filters {filters} ≠ {expected} (classes {}, anchors {})",
                    arch.classes, arch.anchors
                ),
            ),
            LayerSpec::Conv { .. } => {}
            other => push(Some(h), format!("head must be a conv layer, found {}", other.kind())),
        },
    }

    if arch.input.width == 0 || arch.input.height == 0 || arch.input.channels == 0 {
        push(None, format!("input shape {} has a zero dimension", arch.input));
    }
    // Shape errors already reported above for bad layers; only collapse is new here.
    match infer_shapes(arch) {
        Ok(rows) => {
            if let (Some(expected), Some(last)) = (arch.output, rows.last()) {
                if last.output != expected {
                    push(
                        Some(last.index),
                        format!("output shape {} ≠ declared {}", last.output, expected),
                    );
                }
            }
        }
        Err(NetSpecError::Collapsed {
            layer,
            input,
            width,
            height,
        }) => push(
            Some(layer),
            format!("shape collapses to zero: {input} -> {width}x{height}"),
        ),
        Err(_) => {}
    }

    ValidationReport {
        arch: arch.name.clone(),
        violations,
    }
}

pub const FAST_YOLO_1CLASS: &str = "fast-yolo-1class";
pub const FAST_YOLO_2CLASS: &str = "fast-yolo-2class";
pub const CR_NET_SEG: &str = "cr-net-seg";
pub const CR_NET_LETTERS: &str = "cr-net-letters";
pub const CR_NET_DIGITS: &str = "cr-net-digits";

fn fast_yolo(name: &str, classes: u32) -> ArchSpec {
    use LayerSpec as L;
    let head = (classes + 5) * DEFAULT_ANCHORS;
    ArchSpec {
        name: name.into(),
        input: TensorShape::new(416, 416, 3),
        layers: vec![
            L::conv(16, 3),
            L::max(2, 2),
            L::conv(32, 3),
            L::max(2, 2),
            L::conv(64, 3),
            L::max(2, 2),
            L::conv(128, 3),
            L::max(2, 2),
            L::conv(256, 3),
            L::max(2, 2),
            L::conv(512, 3),
            L::max(2, 1),
            L::conv(1024, 3),
            L::conv(1024, 3),
            L::conv(head, 1),
            L::Detection,
        ],
        classes,
        anchors: DEFAULT_ANCHORS,
        output: Some(TensorShape::new(13, 13, head)),
    }
}

fn cr_net(name: &str, input: TensorShape, classes: u32) -> ArchSpec {
    use LayerSpec as L;
    let head = (classes + 5) * DEFAULT_ANCHORS;
    let mut arch = ArchSpec {
        name: name.into(),
        input,
        layers: vec![
            L::conv(32, 3),
            L::max(2, 2),
            L::conv(64, 3),
            L::max(2, 2),
            L::conv(128, 3),
            L::conv(64, 1),
            L::conv(128, 3),
            L::max(2, 2),
            L::conv(256, 3),
            L::conv(128, 1),
            L::conv(256, 3),
            L::conv(512, 3),
            L::conv(256, 1),
            L::conv(512, 3),
            L::conv(head, 1),
            L::Detection,
        ],
        classes,
        anchors: DEFAULT_ANCHORS,
        output: None,
    };
    arch.output = arch.final_shape().ok();
    arch
}

/// The five architectures used by the pipeline.
pub fn builtin_archs() -> Vec<ArchSpec> {
    let seg = cr_net(CR_NET_SEG, TensorShape::new(240, 80, 3), 1);
    let digits = seg.truncated(CR_NET_DIGITS, 4, TensorShape::new(42, 26, 3), 10);
    vec![
        fast_yolo(FAST_YOLO_1CLASS, 1),
        fast_yolo(FAST_YOLO_2CLASS, 2),
        cr_net(CR_NET_LETTERS, TensorShape::new(270, 80, 3), 26),
        digits,
        seg,
    ]
}

pub fn builtin(name: &str) -> Result<ArchSpec, NetSpecError> {
    builtin_archs()
        .into_iter()
        .find(|a| a.name == name)
        .ok_or_else(|| NetSpecError::Unknown(name.to_string()))
}

/// Human-readable shape table with the columns `# type filters size input output`.
pub fn shape_table(arch: &ArchSpec) -> Result<String, NetSpecError> {
    let rows = infer_shapes(arch)?;
    let mut out = format!("{}\n", arch.name);
    out.push_str(&format!(
        "{:>3}  {:<9} {:>7}  {:<7} {:<15} {:<15}\n",
        "#", "layer", "filters", "size", "input", "output"
    ));
    for r in rows {
        let (filters, size) = match r.layer {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
            } => (filters.to_string(), format!("{kernel}x{kernel}/{stride}")),
            LayerSpec::MaxPool { kernel, stride } => (String::new(), format!("{kernel}x{kernel}/{stride}")),
            LayerSpec::Detection => (String::new(), String::new()),
        };
        let (input, output) = match r.layer {
            LayerSpec::Detection => (String::new(), String::new()),
            _ => (r.input.to_string(), r.output.to_string()),
        };
        out.push_str(&format!(
            "{:>3}  {:<9} {:>7}  {:<7} {:<15} {:<15}\n",
            r.index,
            r.layer.kind(),
            filters,
            size,
            input,
            output
        ));
    }
    Ok(out.lines().map(str::trim_end).collect::<Vec<_>>().join("\n") + "\n")
}
