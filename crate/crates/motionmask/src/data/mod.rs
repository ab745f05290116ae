//! On-disk formats: the motion-file contract, mask files, dataset
//! directories, and a minimal BVH-subset reader.

mod bvh;
mod synthetic;

pub use bvh::{parse_bvh, parse_bvh_str, BvhMotion};
pub use synthetic::{generate_motions, write_dataset, SyntheticGaitParams};

use crate::kinematics::{KinError, MotionTensor, Repr, Visibility};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("motion contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Kin(#[from] KinError),
}

type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write a file atomically: contents land under a temp name in the same
/// directory and are renamed into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(path))?;
        }
    }
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

// ── motion file ──────────────────────────────────────────────────────

/// A structured-text motion document. Floats are printed with Rust's
/// shortest-round-trip formatting, so write/read is bit-exact.
#[derive(Debug, Clone)]
pub struct MotionFile {
    pub topology_name: String,
    pub motion: MotionTensor,
    pub root_translation: Option<Vec<[f64; 3]>>,
}

pub fn motion_file_to_string(doc: &MotionFile) -> String {
    let m = &doc.motion;
    let mut out = String::new();
    let _ = writeln!(out, "motionfile v1");
    let _ = writeln!(out, "topology {}", doc.topology_name);
    let _ = writeln!(out, "frame_rate {}", m.frame_rate);
    let _ = writeln!(out, "repr {}", m.repr.as_str());
    let _ = writeln!(out, "dims {} {} {}", m.frames(), m.joints(), m.channels());
    let p = m.pose_dim();
    for t in 0..m.frames() {
        let _ = write!(out, "frame {t}:");
        for v in &m.values()[t * p..(t + 1) * p] {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    let all_visible = m.visibility().flags().iter().all(|&v| v);
    if !all_visible {
        for t in 0..m.frames() {
            let _ = write!(out, "visibility {t}:");
            for j in 0..m.joints() {
                let _ = write!(out, " {}", u8::from(m.visibility().is_visible(t, j)));
            }
            out.push('\n');
        }
    }
    if let Some(root) = &doc.root_translation {
        for (t, r) in root.iter().enumerate() {
            let _ = writeln!(out, "root {t}: {} {} {}", r[0], r[1], r[2]);
        }
    }
    out
}

pub fn write_motion_file(path: &Path, doc: &MotionFile) -> Result<()> {
    write_atomic(path, motion_file_to_string(doc).as_bytes())
}

pub fn parse_motion_file(path: &Path, text: &str) -> Result<MotionFile> {
    let err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (ln, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty file".into()))?;
    if header.trim() != "motionfile v1" {
        return Err(err(ln + 1, format!("expected 'motionfile v1', got '{header}'")));
    }
    let mut topology_name = None;
    let mut frame_rate = None;
    let mut repr = None;
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut frames_rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut vis_rows: Vec<(usize, Vec<bool>)> = Vec::new();
    let mut root_rows: Vec<(usize, [f64; 3])> = Vec::new();

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line
            .split_once(|c: char| c.is_whitespace())
            .ok_or_else(|| err(line_no, format!("malformed line '{line}'")))?;
        let rest = rest.trim();
        match key {
            "topology" => topology_name = Some(rest.to_string()),
            "frame_rate" => {
                frame_rate = Some(rest.parse::<f64>().map_err(|e| {
                    err(line_no, format!("bad frame_rate '{rest}': {e}"))
                })?)
            }
            "repr" => {
                repr = Some(match rest {
                    "position3" => Repr::Position3,
                    "ortho6d" => Repr::Ortho6d,
                    other => return Err(err(line_no, format!("unknown repr '{other}'"))),
                })
            }
            "dims" => {
                let parts: Vec<usize> = rest
                    .split_whitespace()
                    .map(|p| p.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(line_no, format!("bad dims: {e}")))?;
                if parts.len() != 3 {
                    return Err(err(line_no, "dims needs T J n".into()));
                }
                dims = Some((parts[0], parts[1], parts[2]));
            }
            "frame" | "visibility" | "root" => {
                let (index_str, values) = rest
                    .split_once(':')
                    .ok_or_else(|| err(line_no, format!("missing ':' in '{line}'")))?;
                let t: usize = index_str
                    .trim()
                    .parse()
                    .map_err(|e| err(line_no, format!("bad frame index: {e}")))?;
                match key {
                    "frame" => {
                        let row: Vec<f64> = values
                            .split_whitespace()
                            .map(|v| v.parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| err(line_no, format!("bad value: {e}")))?;
                        frames_rows.push((line_no, row));
                        if frames_rows.len() - 1 != t {
                            return Err(err(line_no, format!("frame rows out of order at {t}")));
                        }
                    }
                    "visibility" => {
                        let row: Vec<bool> = values
                            .split_whitespace()
                            .map(|v| match v {
                                "1" => Ok(true),
                                "0" => Ok(false),
                                other => Err(err(line_no, format!("bad flag '{other}'"))),
                            })
                            .collect::<Result<_>>()?;
                        vis_rows.push((line_no, row));
                    }
                    _ => {
                        let row: Vec<f64> = values
                            .split_whitespace()
                            .map(|v| v.parse::<f64>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|e| err(line_no, format!("bad value: {e}")))?;
                        if row.len() != 3 {
                            return Err(err(line_no, "root rows need 3 values".into()));
                        }
                        root_rows.push((line_no, [row[0], row[1], row[2]]));
                    }
                }
            }
            other => return Err(err(line_no, format!("unknown key '{other}'"))),
        }
    }

    let (frames, joints, channels) =
        dims.ok_or_else(|| err(0, "missing dims line".into()))?;
    let repr = repr.ok_or_else(|| err(0, "missing repr line".into()))?;
    if repr.channels() != channels {
        return Err(DataError::Contract(format!(
            "repr {} implies {} channels, dims says {}",
            repr.as_str(),
            repr.channels(),
            channels
        )));
    }
    if frames_rows.len() != frames {
        return Err(DataError::Contract(format!(
            "dims declares {} frames, found {} frame rows",
            frames,
            frames_rows.len()
        )));
    }
    let p = joints * channels;
    let mut values = Vec::with_capacity(frames * p);
    for (line_no, row) in &frames_rows {
        if row.len() != p {
            return Err(err(
                *line_no,
                format!("frame row has {} values, expected {}", row.len(), p),
            ));
        }
        values.extend_from_slice(row);
    }
    let mut motion = MotionTensor::new(
        values,
        frames,
        joints,
        repr,
        frame_rate.ok_or_else(|| err(0, "missing frame_rate line".into()))?,
    )?;
    if !vis_rows.is_empty() {
        if vis_rows.len() != frames {
            return Err(DataError::Contract(format!(
                "{} visibility rows for {} frames",
                vis_rows.len(),
                frames
            )));
        }
        let mut flags = Vec::with_capacity(frames * joints);
        for (line_no, row) in &vis_rows {
            if row.len() != joints {
                return Err(err(
                    *line_no,
                    format!("visibility row has {} flags, expected {}", row.len(), joints),
                ));
            }
            flags.extend_from_slice(row);
        }
        motion.set_visibility(Visibility::from_flags(frames, joints, flags)?)?;
    }
    let root_translation = if root_rows.is_empty() {
        None
    } else {
        if root_rows.len() != frames {
            return Err(DataError::Contract(format!(
                "{} root rows for {} frames",
                root_rows.len(),
                frames
            )));
        }
        Some(root_rows.into_iter().map(|(_, r)| r).collect())
    };
    Ok(MotionFile {
        topology_name: topology_name.ok_or_else(|| err(0, "missing topology line".into()))?,
        motion,
        root_translation,
    })
}

pub fn read_motion_file(path: &Path) -> Result<MotionFile> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_motion_file(path, &text)
}

/// Load every `*.motion.txt` in a directory, sorted by file name.
pub fn load_motion_dir(dir: &Path) -> Result<Vec<MotionTensor>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".motion.txt")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DataError::Contract(format!(
            "no .motion.txt files in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| read_motion_file(p).map(|doc| doc.motion))
        .collect()
}

// ── mask file ────────────────────────────────────────────────────────

pub fn mask_file_to_string(vis: &Visibility) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "maskfile v1");
    let _ = writeln!(out, "dims {} {}", vis.frames(), vis.joints());
    for t in 0..vis.frames() {
        let _ = write!(out, "row {t}:");
        for j in 0..vis.joints() {
            let _ = write!(out, " {}", u8::from(vis.is_visible(t, j)));
        }
        out.push('\n');
    }
    out
}

pub fn write_mask_file(path: &Path, vis: &Visibility) -> Result<()> {
    write_atomic(path, mask_file_to_string(vis).as_bytes())
}

pub fn read_mask_file(path: &Path) -> Result<Visibility> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "maskfile v1" => {}
        other => {
            return Err(err(1, format!("expected 'maskfile v1', got {:?}", other.map(|o| o.1))))
        }
    }
    let (ln, dims_line) = lines.next().ok_or_else(|| err(2, "missing dims".into()))?;
    let dims: Vec<usize> = dims_line
        .trim()
        .strip_prefix("dims")
        .ok_or_else(|| err(ln + 1, "missing dims".into()))?
        .split_whitespace()
        .map(|v| v.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(ln + 1, format!("bad dims: {e}")))?;
    if dims.len() != 2 {
        return Err(err(ln + 1, "dims needs T J".into()));
    }
    let mut flags = Vec::with_capacity(dims[0] * dims[1]);
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (_, values) = line
            .split_once(':')
            .ok_or_else(|| err(idx + 1, "malformed row".into()))?;
        for v in values.split_whitespace() {
            flags.push(match v {
                "1" => true,
                "0" => false,
                other => return Err(err(idx + 1, format!("bad flag '{other}'"))),
            });
        }
    }
    Visibility::from_flags(dims[0], dims[1], flags)
        .map_err(|e| DataError::Contract(e.to_string()))
}

#[cfg(test)]
mod tests;
