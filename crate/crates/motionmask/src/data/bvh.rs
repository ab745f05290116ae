//! Minimal BVH reader: HIERARCHY/MOTION sections, the six standard channel
//! names, Euler angles composed in the file's declared channel order.
//! Position channels are accepted on the root only.

use super::DataError;
use crate::kinematics::{
    quaternion_to_rot6d, Joint, MotionTensor, Quaternion, Repr, SkeletonTopology,
};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    fn parse(s: &str) -> Option<Channel> {
        match s {
            "Xposition" => Some(Channel::Xposition),
            "Yposition" => Some(Channel::Yposition),
            "Zposition" => Some(Channel::Zposition),
            "Xrotation" => Some(Channel::Xrotation),
            "Yrotation" => Some(Channel::Yrotation),
            "Zrotation" => Some(Channel::Zrotation),
            _ => None,
        }
    }

    fn is_position(self) -> bool {
        matches!(self, Channel::Xposition | Channel::Yposition | Channel::Zposition)
    }
}

#[derive(Debug, Clone)]
pub struct BvhMotion {
    pub topology: SkeletonTopology,
    /// Local joint rotations as an ortho-6D motion.
    pub rotations: MotionTensor,
    /// Root world position per frame.
    pub root_translation: Vec<[f64; 3]>,
    pub frame_time: f64,
}

struct Cursor<'a> {
    path: PathBuf,
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &Path, text: &'a str) -> Self {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                tokens.push((i + 1, tok));
            }
        }
        Cursor {
            path: path.to_path_buf(),
            tokens,
            pos: 0,
        }
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos.min(self.tokens.len().saturating_sub(1)))
            .map(|(l, _)| *l)
            .unwrap_or(0)
    }

    fn err(&self, message: impl Into<String>) -> DataError {
        DataError::Parse {
            path: self.path.clone(),
            line: self.line(),
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).map(|(_, t)| *t)
    }

    fn next(&mut self) -> Result<&'a str, DataError> {
        let tok = self
            .tokens
            .get(self.pos)
            .map(|(_, t)| *t)
            .ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(tok)
    }

    fn expect(&mut self, what: &str) -> Result<(), DataError> {
        let tok = self.next()?;
        if tok != what {
            return Err(self.err(format!("expected '{what}', got '{tok}'")));
        }
        Ok(())
    }

    fn number(&mut self) -> Result<f64, DataError> {
        let tok = self.next()?;
        tok.parse::<f64>()
            .map_err(|e| self.err(format!("expected a number, got '{tok}': {e}")))
    }
}

struct JointDecl {
    joint: Joint,
    channels: Vec<Channel>,
}

fn parse_joint(
    cursor: &mut Cursor,
    name: String,
    parent: Option<usize>,
    decls: &mut Vec<JointDecl>,
) -> Result<(), DataError> {
    cursor.expect("{")?;
    cursor.expect("OFFSET")?;
    let offset = [cursor.number()?, cursor.number()?, cursor.number()?];
    cursor.expect("CHANNELS")?;
    let count = cursor.number()? as usize;
    let mut channels = Vec::with_capacity(count);
    for _ in 0..count {
        let tok = cursor.next()?;
        let ch = Channel::parse(tok).ok_or_else(|| cursor.err(format!("unknown channel '{tok}'")))?;
        if ch.is_position() && parent.is_some() {
            return Err(cursor.err(format!(
                "position channel '{tok}' outside the root is not supported"
            )));
        }
        channels.push(ch);
    }
    let index = decls.len();
    decls.push(JointDecl {
        joint: Joint {
            name,
            parent,
            offset,
        },
        channels,
    });

    loop {
        match cursor.peek() {
            Some("JOINT") => {
                cursor.next()?;
                let child = cursor.next()?.to_string();
                parse_joint(cursor, child, Some(index), decls)?;
            }
            Some("End") => {
                cursor.next()?;
                cursor.expect("Site")?;
                cursor.expect("{")?;
                cursor.expect("OFFSET")?;
                let _ = [cursor.number()?, cursor.number()?, cursor.number()?];
                cursor.expect("}")?;
            }
            Some("}") => {
                cursor.next()?;
                return Ok(());
            }
            Some(tok) => {
                let msg = format!("unexpected token '{tok}' in joint body");
                return Err(cursor.err(msg));
            }
            None => return Err(cursor.err("unbalanced braces: joint body never closed")),
        }
    }
}

fn euler_quaternion(channel: Channel, degrees: f64) -> Quaternion {
    let angle = degrees.to_radians();
    let axis = match channel {
        Channel::Xrotation => [1.0, 0.0, 0.0],
        Channel::Yrotation => [0.0, 1.0, 0.0],
        Channel::Zrotation => [0.0, 0.0, 1.0],
        _ => unreachable!("position channel has no axis"),
    };
    Quaternion::from_axis_angle(axis, angle)
}

pub fn parse_bvh_str(path: &Path, text: &str) -> Result<BvhMotion, DataError> {
    let mut cursor = Cursor::new(path, text);
    cursor.expect("HIERARCHY")?;
    cursor.expect("ROOT")?;
    let root_name = cursor.next()?.to_string();
    let mut decls = Vec::new();
    parse_joint(&mut cursor, root_name, None, &mut decls)?;

    cursor.expect("MOTION")?;
    cursor.expect("Frames:")?;
    let frames = cursor.number()? as usize;
    cursor.expect("Frame")?;
    cursor.expect("Time:")?;
    let frame_time = cursor.number()?;
    if frame_time <= 0.0 {
        return Err(cursor.err("frame time must be positive"));
    }

    let per_frame: usize = decls.iter().map(|d| d.channels.len()).sum();
    let joints = decls.len();
    let mut rot_values = Vec::with_capacity(frames * joints * 6);
    let mut root_translation = Vec::with_capacity(frames);
    for f in 0..frames {
        if cursor.peek().is_none() {
            return Err(cursor.err(format!(
                "Frames: {frames} declared but data ends at frame {f}"
            )));
        }
        let mut row = Vec::with_capacity(per_frame);
        for _ in 0..per_frame {
            if cursor.peek().is_none() {
                return Err(cursor.err(format!(
                    "Frames: {frames} declared but the data rows end at frame {f}"
                )));
            }
            row.push(cursor.number()?);
        }
        let mut offset = 0usize;
        let mut root = [0.0f64; 3];
        for decl in &decls {
            let mut q = Quaternion::IDENTITY;
            for (slot, ch) in decl.channels.iter().enumerate() {
                let value = row[offset + slot];
                match ch {
                    Channel::Xposition => root[0] = value,
                    Channel::Yposition => root[1] = value,
                    Channel::Zposition => root[2] = value,
                    rotation => {
                        // compose in declared order: listed first = applied last
                        q = q.multiply(&euler_quaternion(*rotation, value));
                    }
                }
            }
            offset += decl.channels.len();
            rot_values.extend_from_slice(&quaternion_to_rot6d(&q));
        }
        root_translation.push(root);
    }
    if cursor.peek().is_some() {
        return Err(cursor.err(format!(
            "extra data after the {frames} declared frames"
        )));
    }

    let topology = SkeletonTopology::new(
        path.file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "bvh".to_string()),
        decls.into_iter().map(|d| d.joint).collect(),
    )?;
    let rotations = MotionTensor::new(
        rot_values,
        frames,
        joints,
        Repr::Ortho6d,
        1.0 / frame_time,
    )?;
    Ok(BvhMotion {
        topology,
        rotations,
        root_translation,
        frame_time,
    })
}

pub fn parse_bvh(path: &Path) -> Result<BvhMotion, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_bvh_str(path, &text)
}
