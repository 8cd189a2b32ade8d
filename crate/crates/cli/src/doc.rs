//! On-disk model format shared by `track` and `vasculature`.

use serde::{Deserialize, Serialize};

use orientrace::ctos::CenterlineSegment;
use orientrace::etos::{StopReason, VesselSegment};
use orientrace::vasculature::{Junction, JunctionKind, OpticDisk, VasculatureModel};

pub const MODEL_SCHEMA: &str = "orientrace.model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema: String,
    pub params: serde_json::Value,
    pub optic_disk: Option<OpticDisk>,
    pub segments: Vec<SegmentDoc>,
    pub junctions: Vec<JunctionDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDoc {
    pub id: u32,
    pub parent_id: Option<u32>,
    pub stop_reason: Option<StopReason>,
    pub points: Vec<PointDoc>,
}

/// One cross-section. Edges and width are `null` for centerline-only tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointDoc {
    pub cx: f64,
    pub cy: f64,
    pub ux: Option<f64>,
    pub uy: Option<f64>,
    pub vx: Option<f64>,
    pub vy: Option<f64>,
    pub theta: f64,
    pub width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JunctionDoc {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kind: JunctionKind,
    pub segment_ids: Vec<u32>,
}

impl From<&VesselSegment> for SegmentDoc {
    fn from(s: &VesselSegment) -> Self {
        Self {
            id: s.id,
            parent_id: s.parent_id,
            stop_reason: s.stop_reason,
            points: s
                .points
                .iter()
                .map(|p| PointDoc {
                    cx: p.c[0],
                    cy: p.c[1],
                    ux: Some(p.u[0]),
                    uy: Some(p.u[1]),
                    vx: Some(p.v[0]),
                    vy: Some(p.v[1]),
                    theta: p.theta,
                    width: Some(p.w),
                })
                .collect(),
        }
    }
}

impl From<&CenterlineSegment> for SegmentDoc {
    fn from(s: &CenterlineSegment) -> Self {
        Self {
            id: s.id,
            parent_id: s.parent_id,
            stop_reason: s.stop_reason,
            points: s
                .points
                .iter()
                .map(|p| PointDoc {
                    cx: p.c[0],
                    cy: p.c[1],
                    ux: None,
                    uy: None,
                    vx: None,
                    vy: None,
                    theta: p.theta,
                    width: None,
                })
                .collect(),
        }
    }
}

impl From<&Junction> for JunctionDoc {
    fn from(j: &Junction) -> Self {
        Self {
            x: j.position[0],
            y: j.position[1],
            theta: j.theta,
            kind: j.kind,
            segment_ids: j.segment_ids.clone(),
        }
    }
}

impl ModelDocument {
    pub fn new(params: serde_json::Value) -> Self {
        Self {
            schema: MODEL_SCHEMA.to_string(),
            params,
            optic_disk: None,
            segments: Vec::new(),
            junctions: Vec::new(),
        }
    }

    pub fn from_model(m: &VasculatureModel) -> Self {
        let params = serde_json::json!({
            "vasculature": m.params,
            "avg_caliber": m.avg_caliber,
            "t_nu": m.t_nu,
        });
        Self {
            schema: MODEL_SCHEMA.to_string(),
            params,
            optic_disk: Some(m.optic_disk),
            segments: m.segments.iter().map(SegmentDoc::from).collect(),
            junctions: m.junctions.iter().map(JunctionDoc::from).collect(),
        }
    }

    /// Canonical serialisation: struct fields in declaration order, maps with
    /// sorted keys, two-space indentation and a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model is serialisable");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// All cross-sections that carry both edges.
    pub fn measured_profiles(&self) -> Vec<orientrace::widths::MeasuredProfile> {
        self.segments
            .iter()
            .flat_map(|s| s.points.iter())
            .filter_map(|p| {
                Some(orientrace::widths::MeasuredProfile {
                    u: [p.ux?, p.uy?],
                    v: [p.vx?, p.vy?],
                })
            })
            .collect()
    }
}
