#![no_main]

use flockswitch::graph::{Digraph, TopologyEnsemble};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = serde_json::from_slice::<Digraph>(data) {
        let again: Digraph = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(g, again);
        let rooted = g.has_spanning_tree();
        assert_eq!(rooted, g.roots().next().is_some());
    }
    if let Ok(ens) = serde_json::from_slice::<TopologyEnsemble>(data) {
        let union = ens.union();
        if ens.graphs().iter().any(Digraph::has_spanning_tree) {
            assert!(union.has_spanning_tree());
        }
        assert!(ens.min_log_inverse_miss() > 0.0);
    }
});
