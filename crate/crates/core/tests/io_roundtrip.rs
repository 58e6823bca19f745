mod common;

use common::{small_config, small_spec};
use tracegeo::artifact::ArtifactPaths;
use tracegeo::{calibrate, gen_traces, load_calibration, load_trace, write_calibration, write_trace, Error};

#[test]
fn trace_survives_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen_traces(&small_spec(), 4).unwrap();
    let prefix = dir.path().join("world");
    write_trace(&t, &prefix).unwrap();
    let back = load_trace(&prefix).unwrap();
    assert_eq!(back.len(), t.len());
    assert_eq!(back.index(), t.index());
    assert_eq!(back.raw_vectors(), t.raw_vectors());
    assert_eq!(back.metadata(), t.metadata());
}

#[test]
fn calibration_artifact_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen_traces(&small_spec(), 4).unwrap();
    let cfg = small_config();
    let a = write_calibration(&calibrate(&t, &cfg).unwrap(), None, dir.path().join("a")).unwrap();
    let b = write_calibration(&calibrate(&t, &cfg).unwrap(), None, dir.path().join("b")).unwrap();
    for (x, y) in [(&a.manifest, &b.manifest), (&a.payload, &b.payload)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }

    let cal = calibrate(&t, &cfg).unwrap();
    let back = load_calibration(dir.path().join("a")).unwrap();
    assert_eq!(back.whitening.eigenvalues(), cal.whitening.eigenvalues());
    assert_eq!(back.whitening.eigenvectors(), cal.whitening.eigenvectors());
    assert_eq!(back.clusters.centroids(), cal.clusters.centroids());
    assert_eq!(back.clusters.inertia(), cal.clusters.inertia());
}

#[test]
fn damaged_payloads_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = gen_traces(&small_spec(), 4).unwrap();
    let p = write_calibration(&calibrate(&t, &small_config()).unwrap(), None, dir.path().join("m")).unwrap();

    let mut bytes = std::fs::read(&p.payload).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&p.payload, &bytes).unwrap();
    assert!(matches!(load_calibration(&p.manifest), Err(Error::MalformedHeader { .. })));

    bytes.truncate(bytes.len() - 8);
    std::fs::write(&p.payload, &bytes).unwrap();
    assert!(matches!(load_calibration(&p.manifest), Err(Error::DimensionMismatch(_))));
}

#[test]
fn artifact_paths_accept_either_member() {
    let a = ArtifactPaths::from_prefix("x/model.calibration.bin");
    let b = ArtifactPaths::from_prefix("x/model");
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.payload, b.payload);
}
