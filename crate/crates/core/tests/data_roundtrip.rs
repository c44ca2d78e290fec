use std::path::Path;

use deepgcn::data::{generate_sbm, load_dataset, save_dataset, Dataset, Splits, SyntheticSpec};
use deepgcn::graph_ops::Graph;
use deepgcn::linalg::DenseMatrix;
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..30, 1usize..6, 1usize..4).prop_flat_map(|(n, dim, classes)| {
        let edges = proptest::collection::vec((0..n, 0..n), 0..3 * n);
        let features = proptest::collection::vec(
            prop_oneof![Just(0.0), -1e6f64..1e6, any::<f64>().prop_filter("finite", |v| v.is_finite())],
            n * dim,
        );
        let labels = proptest::collection::vec(0..classes, n);
        let roles = proptest::collection::vec(0u8..4, n);
        (edges, features, labels, roles).prop_map(move |(edges, features, labels, roles)| {
            let mut splits = Splits::default();
            for (i, role) in roles.into_iter().enumerate() {
                match role {
                    0 => splits.train.push(i),
                    1 => splits.val.push(i),
                    2 => splits.test.push(i),
                    _ => {}
                }
            }
            let edges = edges.into_iter().filter(|(u, v)| u != v);
            let graph = Graph::new(n, edges).unwrap();
            let x = DenseMatrix::from_vec(n, dim, features).unwrap();
            let used = labels.iter().max().map_or(1, |&m| m + 1);
            Dataset::new(graph, x, labels, used.max(classes), splits).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_then_load_is_identity(d in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back, &d);
        let again = tempfile::tempdir().unwrap();
        save_dataset(&back, again.path()).unwrap();
        for name in ["edges.txt", "features.txt", "labels.txt", "splits.txt"] {
            let a = std::fs::read(dir.path().join(name)).unwrap();
            let b = std::fs::read(again.path().join(name)).unwrap();
            prop_assert_eq!(a, b, "{}", name);
        }
    }
}

#[test]
fn sbm_round_trips() {
    let spec: SyntheticSpec = "blocks=3,nodes=15,dim=6,seed=4".parse().unwrap();
    let d = generate_sbm(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&d, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), d);
}

#[test]
fn fixture_loads() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny");
    let d = load_dataset(dir).unwrap();
    assert_eq!(d.node_count(), 6);
    assert_eq!(d.feature_dim(), 4);
    assert_eq!(d.num_classes, 2);
    assert_eq!(d.graph.edge_count(), 7);
    assert_eq!(d.features.row(1), &[0.0, 2.0, 0.0, 0.5]);
    assert_eq!(d.splits.train, vec![0, 3]);
}
