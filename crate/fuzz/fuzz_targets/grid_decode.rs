//! Grid codec: decoding arbitrary bytes must never panic, and any
//! successfully decoded grid must round-trip bit-exactly through both the
//! binary and the text encoding.

#![no_main]

use libfuzzer_sys::fuzz_target;

use carnot::grid::GridFunction;

fuzz_target!(|data: &[u8]| {
    if data.len() > 1 << 16 {
        return;
    }
    let Ok(g) = GridFunction::decode(data) else { return };

    let binary = GridFunction::decode(&g.encode_binary()).expect("binary round trip");
    assert_eq!(g, binary);

    // Values are finite by construction, so shortest-float text printing
    // reparses exactly.
    let text = GridFunction::decode(g.encode_text().as_bytes()).expect("text round trip");
    assert_eq!(g, text);
});
