#![no_main]

use flockswitch::matrix::{ergodicity_coefficient, is_scrambling, Points, SquareMatrix};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = serde_json::from_slice::<SquareMatrix>(data) {
        if let (Ok(mu), Ok(s)) = (ergodicity_coefficient(&a), is_scrambling(&a)) {
            assert_eq!(s, mu > 0.0);
        }
    }
    if let Ok(p) = serde_json::from_slice::<Points>(data) {
        assert!(p.diameter() >= 0.0);
    }
});
