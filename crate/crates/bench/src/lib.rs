//! Shared inputs for the benchmarks.

use stainscope_core::fixtures::{disk_on_white, probe_slide, TISSUE};
use stainscope_core::prompt::SpecializedPrompt;
use stainscope_core::report::ReportField;
use stainscope_core::ImageBuffer;

/// A 512×512 slide with one tissue disk.
pub fn large_slide() -> ImageBuffer {
    disk_on_white(512, 512, 250.0, 270.0, 180.0, TISSUE)
}

pub fn small_slide() -> ImageBuffer {
    probe_slide()
}

pub fn prompt() -> SpecializedPrompt {
    SpecializedPrompt {
        system_prompt: "Assess Ki-67 staining and answer with one JSON object.".into(),
        notes: String::new(),
        required_json_keys: ReportField::ALL.iter().map(|f| f.key().to_string()).collect(),
    }
}
