#![no_main]

use flockswitch::analysis::check_discrete_conditions;
use flockswitch::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(cfg) = ExperimentConfig::parse_unvalidated(data) else {
        return;
    };
    // Serialize -> parse must reproduce the config and its hash.
    let text = cfg.to_json_pretty().expect("parsed config serializes");
    let again = ExperimentConfig::parse_unvalidated(&text).expect("serialized config parses");
    assert_eq!(cfg, again);
    assert_eq!(cfg.hash(), again.hash());
    if cfg.validate().is_ok() {
        let _ = check_discrete_conditions(&cfg.framework_params());
        let _ = cfg.init.realize(0);
    }
});
