//! Scene specification strings.
//!
//! ```text
//! binary:WxH:eps=E:tplus=A:tminus=B[:layout=left|rect]
//! mask:path/to/mask.pgm:tplus=A:tminus=B
//! path/to/mask.pgm                      (tplus=1, tminus=0)
//! ```
//!
//! In a mask file every nonzero pixel is a `tminus` cell.

use std::path::PathBuf;

use ghostsim::io::read_mask_pgm;
use ghostsim::scene::{make_binary_scene, Layout, TransmissionMap};
use ghostsim::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSpec {
    Binary {
        width: usize,
        height: usize,
        epsilon: f64,
        t_plus: f64,
        t_minus: f64,
        layout: Layout,
    },
    Mask {
        path: PathBuf,
        t_plus: f64,
        t_minus: f64,
    },
}

fn bad(spec: &str, why: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("scene spec `{spec}`: {why}"))
}

fn number(spec: &str, key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(spec, format!("`{key}` needs a number, got `{value}`")))
}

/// `key=value` options; unknown or repeated keys are errors.
fn options<'a>(spec: &str, parts: &[&'a str], allowed: &[&str]) -> Result<Vec<(&'a str, &'a str)>> {
    let mut out: Vec<(&str, &str)> = Vec::new();
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| bad(spec, format!("expected key=value, got `{p}`")))?;
        if !allowed.contains(&k) {
            return Err(bad(spec, format!("unknown key `{k}`")));
        }
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(bad(spec, format!("`{k}` given twice")));
        }
        out.push((k, v));
    }
    Ok(out)
}

fn required(spec: &str, opts: &[(&str, &str)], key: &str) -> Result<f64> {
    let v = opts
        .iter()
        .find(|(k, _)| *k == key)
        .ok_or_else(|| bad(spec, format!("missing `{key}`")))?
        .1;
    number(spec, key, v)
}

impl std::str::FromStr for SceneSpec {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        if let Some(rest) = spec.strip_prefix("binary:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let (w, h) = parts[0]
                .split_once(['x', 'X'])
                .ok_or_else(|| bad(spec, "size must look like WxH"))?;
            let dim = |s: &str| {
                s.parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| bad(spec, format!("bad dimension `{s}`")))
            };
            let opts = options(spec, &parts[1..], &["eps", "tplus", "tminus", "layout"])?;
            let layout = match opts.iter().find(|(k, _)| *k == "layout").map(|(_, v)| *v) {
                None | Some("left") => Layout::LeftBlock,
                Some("rect") => Layout::Rectangle,
                Some(other) => return Err(bad(spec, format!("unknown layout `{other}`"))),
            };
            Ok(SceneSpec::Binary {
                width: dim(w)?,
                height: dim(h)?,
                epsilon: required(spec, &opts, "eps")?,
                t_plus: required(spec, &opts, "tplus")?,
                t_minus: required(spec, &opts, "tminus")?,
                layout,
            })
        } else if let Some(rest) = spec.strip_prefix("mask:") {
            // options are the trailing key=value segments; the path may itself contain ':'
            let parts: Vec<&str> = rest.split(':').collect();
            let first_opt = parts
                .iter()
                .rposition(|p| !p.contains('='))
                .map_or(0, |i| i + 1);
            if first_opt == 0 {
                return Err(bad(spec, "missing mask path"));
            }
            let path = parts[..first_opt].join(":");
            let opts = options(spec, &parts[first_opt..], &["tplus", "tminus"])?;
            Ok(SceneSpec::Mask {
                path: PathBuf::from(path),
                t_plus: required(spec, &opts, "tplus")?,
                t_minus: required(spec, &opts, "tminus")?,
            })
        } else if spec.to_ascii_lowercase().ends_with(".pgm") {
            Ok(SceneSpec::Mask {
                path: PathBuf::from(spec),
                t_plus: 1.0,
                t_minus: 0.0,
            })
        } else {
            Err(bad(spec, "must start with `binary:` or `mask:`, or name a .pgm mask"))
        }
    }
}

impl SceneSpec {
    pub fn build(&self) -> Result<TransmissionMap> {
        match self {
            SceneSpec::Binary {
                width,
                height,
                epsilon,
                t_plus,
                t_minus,
                layout,
            } => make_binary_scene(*width, *height, *epsilon, *t_plus, *t_minus, *layout),
            SceneSpec::Mask {
                path,
                t_plus,
                t_minus,
            } => TransmissionMap::from_mask(&read_mask_pgm(path)?, *t_plus, *t_minus),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_spec_parses_with_default_layout() {
        let s: SceneSpec = "binary:34x28:eps=0.3:tplus=1:tminus=0.2".parse().unwrap();
        assert_eq!(
            s,
            SceneSpec::Binary {
                width: 34,
                height: 28,
                epsilon: 0.3,
                t_plus: 1.0,
                t_minus: 0.2,
                layout: Layout::LeftBlock,
            }
        );
        let r: SceneSpec = "binary:8x8:layout=rect:eps=0.5:tplus=1:tminus=0".parse().unwrap();
        assert!(matches!(r, SceneSpec::Binary { layout: Layout::Rectangle, .. }));
    }

    #[test]
    fn mask_path_may_contain_colons() {
        let s: SceneSpec = "mask:C:/data/a:b.pgm:tplus=0.9:tminus=0.1".parse().unwrap();
        assert_eq!(
            s,
            SceneSpec::Mask {
                path: PathBuf::from("C:/data/a:b.pgm"),
                t_plus: 0.9,
                t_minus: 0.1,
            }
        );
        let bare: SceneSpec = "obj.pgm".parse().unwrap();
        assert!(matches!(bare, SceneSpec::Mask { t_plus, t_minus, .. } if t_plus == 1.0 && t_minus == 0.0));
    }

    #[test]
    fn malformed_specs_are_rejected() {
        for bad in [
            "binary:34:eps=0.3:tplus=1:tminus=0",
            "binary:0x5:eps=0.3:tplus=1:tminus=0",
            "binary:4x4:eps=0.3:tplus=1",
            "binary:4x4:eps=x:tplus=1:tminus=0",
            "binary:4x4:eps=0.3:eps=0.2:tplus=1:tminus=0",
            "binary:4x4:eps=0.3:tplus=1:tminus=0:layout=diag",
            "binary:4x4:eps=0.3:tplus=1:tminus=0:gamma=2",
            "mask:tplus=1:tminus=0",
            "circle:4",
        ] {
            let e = bad.parse::<SceneSpec>().unwrap_err();
            assert!(matches!(e, Error::InvalidParameter(_)), "{bad}: {e}");
        }
    }
}
