#![no_main]

use flockswitch::SwitchingSchedule;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = serde_json::from_slice::<SwitchingSchedule>(data) else {
        return;
    };
    let again: SwitchingSchedule = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(s, again);
    let last = s.last_instant();
    for t in [0, last / 2, last.saturating_sub(1)] {
        if t < last {
            s.topology_at(t).expect("t before the last instant is covered");
        }
    }
    let _ = s.covered_windows(2, 1.0, 3);
    let _ = s.star_instants(3, 0.5);
});
