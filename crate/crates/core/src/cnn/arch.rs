use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    /// Desk-scale residual net: 3×3 stem, two strided stages.
    Reduced,
    /// ResNet18 layout with a single-channel stem and a K-way head.
    Resnet18,
    /// Any other stem/stage combination.
    Custom,
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Reduced => "reduced",
            ArchKind::Resnet18 => "resnet18",
            ArchKind::Custom => "custom",
        })
    }
}

impl FromStr for ArchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduced" => Ok(ArchKind::Reduced),
            "resnet18" => Ok(ArchKind::Resnet18),
            "custom" => Ok(ArchKind::Custom),
            _ => Err(Error::Config(format!("unknown architecture '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stem {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// 3×3 stride-2 max pool after the stem.
    pub maxpool: bool,
}

/// A run of basic residual blocks; only the first block strides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub channels: usize,
    pub stride: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub kind: ArchKind,
    pub window: usize,
    pub stem: Stem,
    pub stages: Vec<Stage>,
    pub classes: usize,
}

/// Output extent of a convolution or pooling window.
pub fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// Shape of one stage of the forward pass for a single sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Architecture {
    /// Stem 1→16 (3×3), stages of 32 and `feature_dim` channels, each with
    /// two blocks and stride 2.
    pub fn reduced(window: usize, feature_dim: usize, classes: usize) -> Result<Self> {
        let arch = Architecture {
            kind: ArchKind::Reduced,
            window,
            stem: Stem {
                channels: 16,
                kernel: 3,
                stride: 1,
                pad: 1,
                maxpool: false,
            },
            stages: vec![
                Stage {
                    channels: 32,
                    stride: 2,
                    blocks: 2,
                },
                Stage {
                    channels: feature_dim,
                    stride: 2,
                    blocks: 2,
                },
            ],
            classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn resnet18(window: usize, classes: usize) -> Result<Self> {
        let stage = |channels, stride| Stage {
            channels,
            stride,
            blocks: 2,
        };
        let arch = Architecture {
            kind: ArchKind::Resnet18,
            window,
            stem: Stem {
                channels: 64,
                kernel: 7,
                stride: 2,
                pad: 3,
                maxpool: true,
            },
            stages: vec![stage(64, 1), stage(128, 2), stage(256, 2), stage(512, 2)],
            classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn build(kind: ArchKind, window: usize, feature_dim: usize, classes: usize) -> Result<Self> {
        match kind {
            ArchKind::Reduced => Self::reduced(window, feature_dim, classes),
            ArchKind::Resnet18 => {
                if feature_dim != 512 {
                    return Err(Error::Config(format!("resnet18 has feature dim 512, not {feature_dim}")));
                }
                Self::resnet18(window, classes)
            }
            ArchKind::Custom => Err(Error::Config("custom architectures are built field by field".into())),
        }
    }

    /// Channels of the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        self.stages.last().map_or(self.stem.channels, |s| s.channels)
    }

    /// Product of all strides, i.e. how much the input side shrinks.
    pub fn downsampling(&self) -> usize {
        let pool = if self.stem.maxpool { 2 } else { 1 };
        self.stem.stride * pool * self.stages.iter().map(|s| s.stride).product::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.window < 8 {
            return bad(format!("window {} is below 8", self.window));
        }
        let st = &self.stem;
        if st.channels == 0 || st.kernel == 0 || st.stride == 0 {
            return bad("stem needs positive channels, kernel and stride".into());
        }
        if st.kernel > self.window + 2 * st.pad {
            return bad(format!("stem kernel {} exceeds padded window", st.kernel));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.blocks == 0 || s.stride == 0 {
                return bad(format!("stage {i} needs positive channels, stride and blocks"));
            }
        }
        let down = self.downsampling();
        if self.window % down != 0 {
            return bad(format!(
                "window {} is not divisible by the total downsampling factor {down}",
                self.window
            ));
        }
        Ok(())
    }

    /// Per-sample activation shapes implied by the layer rules, from the
    /// input through the pooled features and the logits.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let shape = |name: String, channels, side| LayerShape {
            name,
            channels,
            height: side,
            width: side,
        };
        let mut out = vec![shape("input".into(), 1, self.window)];
        let st = &self.stem;
        let mut side = conv_out(self.window, st.kernel, st.stride, st.pad);
        out.push(shape("stem".into(), st.channels, side));
        if st.maxpool {
            side = conv_out(side, 3, 2, 1);
            out.push(shape("maxpool".into(), st.channels, side));
        }
        for (si, s) in self.stages.iter().enumerate() {
            for b in 0..s.blocks {
                let stride = if b == 0 { s.stride } else { 1 };
                side = conv_out(side, 3, stride, 1);
                out.push(shape(format!("stage{}.block{}", si + 1, b + 1), s.channels, side));
            }
        }
        out.push(shape("pool".into(), self.feature_dim(), 1));
        out.push(shape("head".into(), self.classes, 1));
        out
    }

    /// Canonical `key=value` lines; [`Architecture::from_text`] inverts it.
    pub fn to_text(&self) -> String {
        let st = &self.stem;
        let stages: Vec<String> = self
            .stages
            .iter()
            .map(|s| format!("{}:{}:{}", s.channels, s.stride, s.blocks))
            .collect();
        format!(
            "arch={}\nwindow={}\nin_channels=1\nstem={}:{}:{}:{}\nmaxpool={}\nstages={}\nclasses={}\n",
            self.kind,
            self.window,
            st.channels,
            st.kernel,
            st.stride,
            st.pad,
            u8::from(st.maxpool),
            stages.join(","),
            self.classes
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(&parse_kv(text)?)
    }

    pub(crate) fn from_map(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Format(format!("descriptor lacks '{k}'")));
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad number '{s}' in descriptor")));
        let nums = |s: &str, n: usize| -> Result<Vec<usize>> {
            let v = s.split(':').map(num).collect::<Result<Vec<_>>>()?;
            if v.len() != n {
                return Err(Error::Format(format!("'{s}' should have {n} fields")));
            }
            Ok(v)
        };
        if get("in_channels")? != "1" {
            return Err(Error::Format("only single-channel input is supported".into()));
        }
        let stem = nums(get("stem")?, 4)?;
        let stages = get("stages")?;
        let stages = if stages.is_empty() {
            Vec::new()
        } else {
            stages
                .split(',')
                .map(|s| {
                    nums(s, 3).map(|v| Stage {
                        channels: v[0],
                        stride: v[1],
                        blocks: v[2],
                    })
                })
                .collect::<Result<_>>()?
        };
        let arch = Architecture {
            kind: get("arch")?.parse().map_err(|e: Error| Error::Format(e.to_string()))?,
            window: num(get("window")?)?,
            stem: Stem {
                channels: stem[0],
                kernel: stem[1],
                stride: stem[2],
                pad: stem[3],
                maxpool: match get("maxpool")?.as_str() {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::Format(format!("bad maxpool flag '{other}'"))),
                },
            },
            stages,
            classes: num(get("classes")?)?,
        };
        arch.validate().map_err(|e| Error::Format(format!("invalid architecture: {e}")))?;
        Ok(arch)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub(crate) fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("expected key=value, got '{line}'")))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Format(format!("duplicate key '{}'", k.trim())));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_shapes_at_32() {
        let a = Architecture::reduced(32, 64, 10).unwrap();
        let s = a.layer_shapes();
        let last_block = &s[s.len() - 3];
        assert_eq!((last_block.channels, last_block.height), (64, 8));
        assert_eq!(a.feature_dim(), 64);
        assert_eq!(a.downsampling(), 4);
    }

    #[test]
    fn resnet18_shrinks_by_32() {
        let a = Architecture::resnet18(128, 10).unwrap();
        assert_eq!(a.downsampling(), 32);
        assert_eq!(a.layer_shapes().iter().rev().nth(2).unwrap().height, 4);
        assert!(Architecture::resnet18(48, 10).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(Architecture::reduced(30, 64, 10).is_err());
        assert!(Architecture::reduced(4, 64, 10).is_err());
        assert!(Architecture::reduced(32, 64, 1).is_err());
        assert!(Architecture::build(ArchKind::Resnet18, 128, 64, 4).is_err());
    }

    #[test]
    fn text_round_trip() {
        for a in [Architecture::reduced(32, 48, 7).unwrap(), Architecture::resnet18(64, 3).unwrap()] {
            assert_eq!(Architecture::from_text(&a.to_text()).unwrap(), a);
        }
    }

    #[test]
    fn malformed_descriptor() {
        let text = Architecture::reduced(32, 64, 4).unwrap().to_text();
        assert!(Architecture::from_text(&text.replace("stem=16:3:1:1", "stem=16:3")).is_err());
        assert!(Architecture::from_text(&text.replace("window=32", "window=31")).is_err());
        assert!(Architecture::from_text(&format!("{text}classes=3\n")).is_err());
        assert!(Architecture::from_text("arch=reduced").is_err());
    }
}
