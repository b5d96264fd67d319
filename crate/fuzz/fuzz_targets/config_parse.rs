//! Config files: TOML parsing and full resolution must never panic.
//! Oversized group or grid requests are skipped so the harness probes
//! logic, not allocator limits.

#![no_main]

use libfuzzer_sys::fuzz_target;

use carnot::config::{self, ConfigFile, GroupTable};

fn group_too_large(t: &GroupTable) -> bool {
    t.n.is_some_and(|n| n > 16)
        || t.layer_dims
            .as_ref()
            .is_some_and(|d| d.len() > 6 || d.iter().copied().sum::<usize>() > 12)
        || t.brackets.as_ref().is_some_and(|b| b.len() > 64)
}

fuzz_target!(|data: &[u8]| {
    if data.len() > 16384 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(file) = ConfigFile::parse_str(text) else { return };
    if group_too_large(&file.group) {
        return;
    }
    if let Some(grid) = &file.grid {
        let nodes = grid
            .shape
            .iter()
            .fold(1u128, |acc, &s| acc.saturating_mul(s as u128));
        if nodes > 1 << 20 {
            return;
        }
    }
    if let Ok(resolved) = config::resolve(&file, None, None) {
        // Resolved configs must round-trip through their JSON summary.
        let summary = resolved.summary();
        serde_json::to_string(&summary).expect("summary serializes");
    }
});
