//! Input featurization: converts typed input descriptors into fixed-order
//! feature vectors and models the on/off critical-path extraction cost.
//!
//! Each input type has a fixed schema; the vector is the schema fields in
//! declared order with the byte size appended last (payloads are the raw
//! scalar alone). Featurization is pure: one descriptor always yields one
//! vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeaturizeError {
    #[error("input {input_id}: {field} must be within {expected}, got {got}")]
    FieldOutOfRange {
        input_id: String,
        field: &'static str,
        expected: &'static str,
        got: f64,
    },
}

/// What kind of input a function consumes. Determines the feature schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputType {
    Image,
    Matrix,
    Video,
    Csv,
    Json,
    Audio,
    Payload,
}

impl InputType {
    pub fn as_str(&self) -> &'static str {
        match self {
            InputType::Image => "image",
            InputType::Matrix => "matrix",
            InputType::Video => "video",
            InputType::Csv => "csv",
            InputType::Json => "json",
            InputType::Audio => "audio",
            InputType::Payload => "payload",
        }
    }

    /// Attribute names in vector order, excluding the appended byte size.
    pub fn field_order(&self) -> &'static [&'static str] {
        match self {
            InputType::Image => &["width_px", "height_px", "num_channels", "dpi_x", "dpi_y"],
            InputType::Matrix => &["rows", "cols", "density"],
            InputType::Video => &[
                "width_px",
                "height_px",
                "duration_s",
                "bitrate_bps",
                "avg_frame_rate_fps",
                "encoding",
            ],
            InputType::Csv => &["rows", "cols"],
            InputType::Json => &["outer_length"],
            InputType::Audio => &[
                "num_channels",
                "sample_rate_hz",
                "duration_s",
                "bitrate_bps",
                "flac_flag",
            ],
            InputType::Payload => &["value"],
        }
    }

    /// Feature vector length produced by [`featurize`].
    pub fn dim(&self) -> usize {
        match self {
            // Raw scalar only; no size appended.
            InputType::Payload => 1,
            other => other.field_order().len() + 1,
        }
    }
}

/// Typed metadata for one input. The attribute variant always matches the
/// declared input type by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDescriptor {
    pub input_id: String,
    pub size_bytes: u64,
    /// Simulated latency of extracting these features, charged to the
    /// critical path only for storage-triggered invocations.
    pub featurize_cost_ms: f64,
    pub trigger: TriggerKind,
    pub attrs: InputAttrs,
}

/// How the invocation was initiated; controls whether feature extraction
/// lands on the critical path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    /// A datastore write triggered the invocation: features are extracted
    /// inline and the cost is charged.
    StorageTrigger,
    /// API invocation with a payload: features need no extraction.
    ApiTrigger,
    /// The object was persisted earlier and featurized in the background.
    #[default]
    PreExtracted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input_type", rename_all = "lowercase")]
pub enum InputAttrs {
    Image {
        width_px: f64,
        height_px: f64,
        num_channels: f64,
        dpi_x: f64,
        dpi_y: f64,
    },
    Matrix {
        rows: f64,
        cols: f64,
        density: f64,
    },
    Video {
        width_px: f64,
        height_px: f64,
        duration_s: f64,
        bitrate_bps: f64,
        avg_frame_rate_fps: f64,
        encoding: String,
    },
    Csv {
        rows: f64,
        cols: f64,
    },
    Json {
        outer_length: f64,
    },
    Audio {
        num_channels: f64,
        sample_rate_hz: f64,
        duration_s: f64,
        bitrate_bps: f64,
        flac: bool,
    },
    Payload {
        value: f64,
    },
}

impl InputAttrs {
    pub fn input_type(&self) -> InputType {
        match self {
            InputAttrs::Image { .. } => InputType::Image,
            InputAttrs::Matrix { .. } => InputType::Matrix,
            InputAttrs::Video { .. } => InputType::Video,
            InputAttrs::Csv { .. } => InputType::Csv,
            InputAttrs::Json { .. } => InputType::Json,
            InputAttrs::Audio { .. } => InputType::Audio,
            InputAttrs::Payload { .. } => InputType::Payload,
        }
    }
}

impl InputDescriptor {
    pub fn input_type(&self) -> InputType {
        self.attrs.input_type()
    }

    /// Range checks that the catalog loader runs on every descriptor.
    pub fn validate(&self) -> Result<(), FeaturizeError> {
        let check_nonneg = |field: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FeaturizeError::FieldOutOfRange {
                    input_id: self.input_id.clone(),
                    field,
                    expected: "[0, inf)",
                    got: v,
                })
            }
        };
        match &self.attrs {
            InputAttrs::Matrix { rows, cols, density } => {
                check_nonneg("rows", *rows)?;
                check_nonneg("cols", *cols)?;
                if !(0.0..=1.0).contains(density) {
                    return Err(FeaturizeError::FieldOutOfRange {
                        input_id: self.input_id.clone(),
                        field: "density",
                        expected: "[0, 1]",
                        got: *density,
                    });
                }
            }
            InputAttrs::Image {
                width_px,
                height_px,
                num_channels,
                dpi_x,
                dpi_y,
            } => {
                check_nonneg("width_px", *width_px)?;
                check_nonneg("height_px", *height_px)?;
                check_nonneg("num_channels", *num_channels)?;
                check_nonneg("dpi_x", *dpi_x)?;
                check_nonneg("dpi_y", *dpi_y)?;
            }
            InputAttrs::Video {
                width_px,
                height_px,
                duration_s,
                bitrate_bps,
                avg_frame_rate_fps,
                ..
            } => {
                check_nonneg("width_px", *width_px)?;
                check_nonneg("height_px", *height_px)?;
                check_nonneg("duration_s", *duration_s)?;
                check_nonneg("bitrate_bps", *bitrate_bps)?;
                check_nonneg("avg_frame_rate_fps", *avg_frame_rate_fps)?;
            }
            InputAttrs::Csv { rows, cols } => {
                check_nonneg("rows", *rows)?;
                check_nonneg("cols", *cols)?;
            }
            InputAttrs::Json { outer_length } => check_nonneg("outer_length", *outer_length)?,
            InputAttrs::Audio {
                num_channels,
                sample_rate_hz,
                duration_s,
                bitrate_bps,
                ..
            } => {
                check_nonneg("num_channels", *num_channels)?;
                check_nonneg("sample_rate_hz", *sample_rate_hz)?;
                check_nonneg("duration_s", *duration_s)?;
                check_nonneg("bitrate_bps", *bitrate_bps)?;
            }
            InputAttrs::Payload { value } => check_nonneg("value", *value)?,
        }
        check_nonneg("featurize_cost_ms", self.featurize_cost_ms)
    }

    /// A named attribute by schema field name, used to pick the work scalar
    /// a function profile designates. `size_bytes` is always addressable.
    pub fn attr(&self, name: &str) -> Option<f64> {
        if name == "size_bytes" {
            return Some(self.size_bytes as f64);
        }
        let fields = ordered_fields(&self.attrs);
        self.attrs
            .input_type()
            .field_order()
            .iter()
            .position(|f| *f == name)
            .map(|i| fields[i])
    }
}

/// Stable numeric code for a video encoding tag.
fn encoding_code(tag: &str) -> f64 {
    match tag.to_ascii_lowercase().as_str() {
        "mp4" => 1.0,
        "mpeg4" => 2.0,
        "webm" => 3.0,
        "mkv" => 4.0,
        "avi" => 5.0,
        "mov" => 6.0,
        other => {
            // FNV-1a keeps unknown tags deterministic across runs.
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for b in other.bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            7.0 + (h % 993) as f64
        }
    }
}

fn ordered_fields(attrs: &InputAttrs) -> Vec<f64> {
    match attrs {
        InputAttrs::Image {
            width_px,
            height_px,
            num_channels,
            dpi_x,
            dpi_y,
        } => vec![*width_px, *height_px, *num_channels, *dpi_x, *dpi_y],
        InputAttrs::Matrix { rows, cols, density } => vec![*rows, *cols, *density],
        InputAttrs::Video {
            width_px,
            height_px,
            duration_s,
            bitrate_bps,
            avg_frame_rate_fps,
            encoding,
        } => vec![
            *width_px,
            *height_px,
            *duration_s,
            *bitrate_bps,
            *avg_frame_rate_fps,
            encoding_code(encoding),
        ],
        InputAttrs::Csv { rows, cols } => vec![*rows, *cols],
        InputAttrs::Json { outer_length } => vec![*outer_length],
        InputAttrs::Audio {
            num_channels,
            sample_rate_hz,
            duration_s,
            bitrate_bps,
            flac,
        } => vec![
            *num_channels,
            *sample_rate_hz,
            *duration_s,
            *bitrate_bps,
            if *flac { 1.0 } else { 0.0 },
        ],
        InputAttrs::Payload { value } => vec![*value],
    }
}

/// Deterministic fixed-order feature vector for a descriptor: the schema
/// fields in declared order, then `size_bytes`. Payload inputs are the raw
/// scalar alone.
pub fn featurize(desc: &InputDescriptor) -> Vec<f64> {
    let mut v = ordered_fields(&desc.attrs);
    if desc.input_type() != InputType::Payload {
        v.push(desc.size_bytes as f64);
    }
    v
}

/// Feature-extraction latency in milliseconds charged to the invocation's
/// critical path. Only storage-triggered invocations pay it; background
/// extraction and payload features are free.
pub fn extraction_latency_ms(desc: &InputDescriptor, trigger: TriggerKind) -> f64 {
    match trigger {
        TriggerKind::StorageTrigger => desc.featurize_cost_ms,
        TriggerKind::ApiTrigger | TriggerKind::PreExtracted => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_desc() -> InputDescriptor {
        InputDescriptor {
            input_id: "m4000".into(),
            size_bytes: 128_000_000,
            featurize_cost_ms: 27.0,
            trigger: TriggerKind::StorageTrigger,
            attrs: InputAttrs::Matrix {
                rows: 4000.0,
                cols: 4000.0,
                density: 1.0,
            },
        }
    }

    #[test]
    fn matrix_vector_order() {
        assert_eq!(
            featurize(&matrix_desc()),
            vec![4000.0, 4000.0, 1.0, 128_000_000.0]
        );
    }

    #[test]
    fn image_vector_is_six_elements_in_schema_order() {
        let desc = InputDescriptor {
            input_id: "img".into(),
            size_bytes: 12_000,
            featurize_cost_ms: 0.13,
            trigger: TriggerKind::PreExtracted,
            attrs: InputAttrs::Image {
                width_px: 100.0,
                height_px: 100.0,
                num_channels: 3.0,
                dpi_x: 72.0,
                dpi_y: 72.0,
            },
        };
        assert_eq!(
            featurize(&desc),
            vec![100.0, 100.0, 3.0, 72.0, 72.0, 12_000.0]
        );
        assert_eq!(desc.input_type().dim(), 6);
    }

    #[test]
    fn payload_vector_is_raw_scalar() {
        let desc = InputDescriptor {
            input_id: "url".into(),
            size_bytes: 480,
            featurize_cost_ms: 0.0,
            trigger: TriggerKind::ApiTrigger,
            attrs: InputAttrs::Payload { value: 480.0 },
        };
        assert_eq!(featurize(&desc), vec![480.0]);
        assert_eq!(InputType::Payload.dim(), 1);
    }

    #[test]
    fn extraction_latency_by_trigger() {
        let desc = matrix_desc();
        assert_eq!(
            extraction_latency_ms(&desc, TriggerKind::StorageTrigger),
            27.0
        );
        assert_eq!(extraction_latency_ms(&desc, TriggerKind::PreExtracted), 0.0);
        assert_eq!(extraction_latency_ms(&desc, TriggerKind::ApiTrigger), 0.0);
    }

    #[test]
    fn featurize_is_pure() {
        let desc = matrix_desc();
        assert_eq!(featurize(&desc), featurize(&desc));
    }

    #[test]
    fn dims_match_schema_per_type() {
        for t in [
            InputType::Image,
            InputType::Matrix,
            InputType::Video,
            InputType::Csv,
            InputType::Json,
            InputType::Audio,
        ] {
            assert_eq!(t.dim(), t.field_order().len() + 1, "{t:?}");
        }
    }

    #[test]
    fn validate_rejects_out_of_range_density() {
        let mut desc = matrix_desc();
        desc.attrs = InputAttrs::Matrix {
            rows: 10.0,
            cols: 10.0,
            density: 1.5,
        };
        assert!(matches!(
            desc.validate(),
            Err(FeaturizeError::FieldOutOfRange { field: "density", .. })
        ));
    }

    #[test]
    fn attr_lookup_by_name() {
        let desc = matrix_desc();
        assert_eq!(desc.attr("rows"), Some(4000.0));
        assert_eq!(desc.attr("size_bytes"), Some(128_000_000.0));
        assert_eq!(desc.attr("bogus"), None);
    }

    #[test]
    fn encoding_tags_are_stable_codes() {
        assert_eq!(encoding_code("mp4"), 1.0);
        assert_eq!(encoding_code("MP4"), 1.0);
        let a = encoding_code("prores");
        assert_eq!(a, encoding_code("prores"));
        assert!(a >= 7.0);
    }
}
