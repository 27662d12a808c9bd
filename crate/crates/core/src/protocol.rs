//! Frames exchanged with live clients. Each frame is one WebSocket text
//! message holding a JSON object tagged by `"type"`. Field names are frozen;
//! see `docs/protocol.md`.

use serde::{Deserialize, Serialize};

use crate::runlog::{Diagnostics, Outcome, Phase};
use crate::sim::WorldState;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Viewer,
    Expert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseAction {
    Pause,
    Resume,
    Speed,
}

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientFrame {
    Hello {
        role: Role,
    },
    /// Starts (`active = true`) or ends a drag on one frame origin.
    Drag {
        joint_index: usize,
        /// World frame, m/s.
        vector: [f64; 3],
        active: bool,
    },
    /// Replaces the Cartesian box; gains are kept.
    Region {
        center: [f64; 3],
        half_sizes: [f64; 3],
    },
    PhaseCtl {
        action: PhaseAction,
        /// Required for `speed`: multiplier on the real-time factor.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        speed: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    RoleConflict,
    NotExpert,
    InvalidRegion,
    InvalidDrag,
    InvalidSpeed,
    MalformedFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub x: [f64; 2],
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxFrame {
    pub center: [f64; 3],
    pub half_sizes: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: f64,
    pub phase: Phase,
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
    pub ee_position: [f64; 3],
    /// `(v, u_x, u_y, u_z)`.
    pub ee_quaternion: [f64; 4],
    pub feature: FeatureFrame,
    pub target: FeatureFrame,
    /// Frame origins from the base to the tool.
    pub joint_positions: Vec<[f64; 3]>,
    pub objects: Vec<[f64; 3]>,
    pub cartesian_box: BoxFrame,
    pub effort_active: bool,
    pub paused: bool,
    pub speed: f64,
    pub diag: Option<Diagnostics>,
}

impl StateFrame {
    pub fn from_world(w: &WorldState, paused: bool, speed: f64) -> Self {
        let v3 = |v: &nalgebra::Vector3<f64>| [v.x, v.y, v.z];
        Self {
            t: w.t,
            phase: w.phase,
            q: w.q.clone(),
            q_dot: w.q_dot.clone(),
            ee_position: v3(&w.ee.r_t),
            ee_quaternion: [w.ee.p.w, w.ee.p.i, w.ee.p.j, w.ee.p.k],
            feature: FeatureFrame { x: [w.feature.x.x, w.feature.x.y], visible: w.feature.visible },
            target: FeatureFrame { x: [w.target_px.x.x, w.target_px.x.y], visible: w.target_px.visible },
            joint_positions: w.joint_positions.iter().map(v3).collect(),
            objects: w.objects.iter().map(v3).collect(),
            cartesian_box: BoxFrame {
                center: v3(&w.cartesian_box.center),
                half_sizes: v3(&w.cartesian_box.half_sizes),
            },
            effort_active: w.effort_active,
            paused,
            speed,
            diag: w.diag.clone(),
        }
    }
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Welcome {
        protocol: u32,
        role: Role,
        n_dof: usize,
        dt: f64,
        image_size: [f64; 2],
    },
    State(StateFrame),
    RegionAck(BoxFrame),
    Error {
        code: ErrorCode,
        message: String,
    },
    Outcome {
        outcome: Outcome,
    },
}

impl ServerFrame {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerFrame::Error { code, message: message.into() }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("frames are always serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_frames_have_frozen_shape() {
        let f: ClientFrame =
            serde_json::from_str(r#"{"type":"drag","joint_index":3,"vector":[0.1,0,0],"active":true}"#).unwrap();
        assert_eq!(f, ClientFrame::Drag { joint_index: 3, vector: [0.1, 0.0, 0.0], active: true });
        let f: ClientFrame = serde_json::from_str(r#"{"type":"phase_ctl","action":"speed","speed":2.0}"#).unwrap();
        assert_eq!(f, ClientFrame::PhaseCtl { action: PhaseAction::Speed, speed: Some(2.0) });
        assert!(serde_json::from_str::<ClientFrame>(r#"{"type":"drag","joint_index":3}"#).is_err());
        assert!(serde_json::from_str::<ClientFrame>(r#"{"type":"hello","role":"expert","x":1}"#).is_err());
    }

    #[test]
    fn error_frame_text() {
        let text = ServerFrame::error(ErrorCode::RoleConflict, "taken").to_text();
        assert_eq!(text, r#"{"type":"error","code":"role_conflict","message":"taken"}"#);
    }
}
