//! Expression parser: parsing must never panic, and the printed canonical
//! form must reparse to the same canonical form. Accepted trees are also
//! evaluated once to cover the interpreter.

#![no_main]

use libfuzzer_sys::fuzz_target;

use carnot::expr;
use carnot::field::{ExprField, ScalarField};

fuzz_target!(|data: &[u8]| {
    if data.len() > 4096 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(tree) = expr::parse(text) else { return };

    let printed = tree.to_string();
    let reparsed = expr::parse(&printed).expect("printed form must reparse");
    assert_eq!(printed, reparsed.to_string(), "canonical form must be stable");

    // Evaluation returns NaN for domain errors instead of panicking.
    if reparsed.check_arity(16).is_ok() {
        let f = ExprField::new(reparsed, 16).expect("arity already checked");
        let _ = f.eval(&[0.3; 16]);
    }
});
