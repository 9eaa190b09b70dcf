//! Line-oriented pose sequence files.
//!
//! ```text
//! {"fps":30.0,"joint_count":24}
//! {"theta":[...72 reals...],"beta":[...10 reals...]}
//! ...
//! ```

use super::{PoseFrame, PoseSequence, PoseSequenceError, Result};
use crate::body_model::{BodyPose, BodyShape};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    fps: f64,
    joint_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    theta: Vec<f64>,
    beta: Vec<f64>,
}

pub fn sequence_to_string(seq: &PoseSequence) -> String {
    let mut out = serde_json::to_string(&Header {
        fps: seq.fps(),
        joint_count: seq.joint_count(),
    })
    .unwrap();
    out.push('\n');
    for f in seq.frames() {
        let rec = FrameRecord {
            theta: f.pose.theta(),
            beta: f.shape.coefficients().to_vec(),
        };
        out.push_str(&serde_json::to_string(&rec).unwrap());
        out.push('\n');
    }
    out
}

pub fn parse_sequence(text: &str) -> Result<PoseSequence> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse_err = |line: usize, message: String| PoseSequenceError::Parse { line: line + 1, message };
    let (hl, header) = lines.next().ok_or(PoseSequenceError::Empty)?;
    let header: Header = serde_json::from_str(header).map_err(|e| parse_err(hl, e.to_string()))?;
    let mut frames = Vec::new();
    for (ln, line) in lines {
        let rec: FrameRecord = serde_json::from_str(line).map_err(|e| parse_err(ln, e.to_string()))?;
        if rec.theta.len() != 3 * header.joint_count {
            return Err(parse_err(
                ln,
                format!("theta has {} values, header declares {} joints", rec.theta.len(), header.joint_count),
            ));
        }
        let pose = BodyPose::from_theta(&rec.theta).map_err(|e| parse_err(ln, e.to_string()))?;
        let shape = BodyShape::from_slice(&rec.beta).map_err(|e| parse_err(ln, e.to_string()))?;
        frames.push(PoseFrame { pose, shape });
    }
    PoseSequence::new(frames, header.fps)
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<PoseSequence> {
    parse_sequence(&std::fs::read_to_string(path)?)
}

pub fn write_sequence(seq: &PoseSequence, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, sequence_to_string(seq))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn sample() -> PoseSequence {
        let p = BodyPose::zero(24).with_joint_rotation(4, Vector3::new(0.1, -0.2, 0.3));
        PoseSequence::from_poses(vec![BodyPose::zero(24), p], &BodyShape::unit(2), 24.0).unwrap()
    }

    #[test]
    fn round_trip() {
        let s = sample();
        assert_eq!(parse_sequence(&sequence_to_string(&s)).unwrap(), s);
    }

    #[test]
    fn bad_line_is_reported() {
        let mut text = sequence_to_string(&sample());
        text.push_str("{\"theta\":[1,2],\"beta\":[]}\n");
        match parse_sequence(&text).unwrap_err() {
            PoseSequenceError::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        assert!(matches!(
            parse_sequence("{\"fps\":30,\"joint_count\":24}\n"),
            Err(PoseSequenceError::Empty)
        ));
    }
}
