//! Standalone group tables: parsing, bracket validation, and table
//! generation must never panic, and accepted specs must satisfy basic
//! structural invariants.

#![no_main]

use libfuzzer_sys::fuzz_target;

use carnot::config::{parse_group_spec_toml, GroupTable};

fuzz_target!(|data: &[u8]| {
    if data.len() > 8192 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Pre-parse with the same schema to cap table sizes before generation.
    let Ok(table) = toml::from_str::<GroupTable>(text) else { return };
    if table.n.is_some_and(|n| n > 16)
        || table
            .layer_dims
            .as_ref()
            .is_some_and(|d| d.len() > 6 || d.iter().copied().sum::<usize>() > 12)
        || table.brackets.as_ref().is_some_and(|b| b.len() > 64)
    {
        return;
    }
    let Ok(spec) = parse_group_spec_toml(text) else { return };

    assert_eq!(spec.dim, spec.layer_dims.iter().sum::<usize>());
    assert_eq!(spec.step, spec.layer_dims.len());
    assert!(spec.step <= 3);
    let zero = vec![0.0; spec.dim];
    assert_eq!(spec.hom_norm(&zero), 0.0);
    let prod = spec.multiply(&zero, &zero).expect("identity multiplies");
    assert!(prod.iter().all(|v| *v == 0.0));
});
