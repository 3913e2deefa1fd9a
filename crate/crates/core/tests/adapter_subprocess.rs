//! The subprocess adapter contract, exercised with small shell scripts.
//!
//! The scripts do not compute anything: the test pre-encodes PTLF fixtures
//! and the script copies them to the output paths listed in the request.

#![cfg(unix)]

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ptl_core::gap::Scale;
use ptl_core::io::adapter::{
    invoke_adapter, AdapterEndpoint, AdapterError, AdapterRequest, AdapterRole, Backend, InstanceSet,
    OutputValidationError, SubprocessBackend,
};
use ptl_core::io::json::read_json;
use ptl_core::io::ptlf::write_features;
use ptl_core::FeatureVector;

const SCALES: [Scale; 4] = [128, 256, 384, 512];
const DIM: usize = 3;

fn request(ids: &[u64]) -> AdapterRequest {
    AdapterRequest {
        role: AdapterRole::Embedder,
        iteration: 2,
        set: InstanceSet::Virtual,
        instance_ids: ids.to_vec(),
        scales: SCALES.to_vec(),
        dim: DIM,
        seed: 11,
        outputs: Vec::new(),
        context_ids: Vec::new(),
        target_mean: None,
        gamma: None,
    }
}

fn vectors(ids: &[u64], scale: Scale) -> Vec<FeatureVector<f32>> {
    ids.iter()
        .map(|&id| FeatureVector::new(id, (0..DIM).map(|k| id as f32 + scale as f32 / 1000.0 + k as f32).collect()))
        .collect()
}

/// Write one fixture per scale and return the fixture directory.
fn fixtures(root: &Path, ids: &[u64], file_scale: impl Fn(Scale) -> Scale) -> PathBuf {
    let dir = root.join("fixtures");
    fs::create_dir_all(&dir).unwrap();
    for &s in &SCALES {
        write_features(dir.join(format!("{s}.ptlf")), file_scale(s), DIM, &vectors(ids, s)).unwrap();
    }
    dir
}

fn script(root: &Path, name: &str, body: &str) -> AdapterEndpoint {
    let path = root.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    AdapterEndpoint {
        program: path.display().to_string(),
        args: Vec::new(),
    }
}

/// Copies `$FIX/<scale>.ptlf` to every `(scale, path)` pair of the request.
fn copying_script(root: &Path, fixtures: &Path) -> AdapterEndpoint {
    let body = format!(
        r#"[ "$1" = "--request" ] || {{ echo "usage: $0 --request <path>" >&2; exit 2; }}
awk '/"scale":/ {{ gsub(/[^0-9]/, ""); s = $0 }}
     /"path":/  {{ sub(/.*"path": *"/, ""); sub(/".*/, ""); print s, $0 }}' "$2" |
while read -r scale path; do
  cp "{fix}/$scale.ptlf" "$path" || exit 3
done"#,
        fix = fixtures.display()
    );
    script(root, "adapter.sh", &body)
}

#[test]
fn three_ids_four_scales() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = [5, 9, 7];
    let fix = fixtures(tmp.path(), &ids, |s| s);
    let endpoint = copying_script(tmp.path(), &fix);
    let work = tmp.path().join("work");
    let req = request(&ids);

    let out = invoke_adapter(&endpoint, &req, &work, Duration::from_secs(30)).unwrap();
    assert_eq!(out.per_scale.keys().copied().collect::<Vec<_>>(), SCALES);
    for (&s, vs) in &out.per_scale {
        assert_eq!(vs.len(), 3);
        assert_eq!(vs, &vectors(&ids, s));
    }

    // artifacts end up under work/<label>, with no staging left behind
    let done = work.join(req.label());
    assert_eq!(req.label(), "iter0002-embedder-virtual");
    let written: AdapterRequest = read_json(done.join("request.json")).unwrap();
    assert_eq!(written.instance_ids, ids);
    assert_eq!(written.outputs.len(), 4);
    let ptlf = fs::read_dir(&done)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ptlf"))
        .count();
    assert_eq!(ptlf, 4);
    let leftovers: Vec<_> = fs::read_dir(&work)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with(".staging"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");

    // rerunning the same request replaces the previous output directory
    let mut backend = SubprocessBackend::new(endpoint, &work);
    assert_eq!(backend.invoke(&req).unwrap(), out);
}

#[test]
fn nonzero_exit_carries_code_and_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let endpoint = script(tmp.path(), "fail.sh", "echo 'model weights not found' >&2\nexit 2");
    let err = invoke_adapter(&endpoint, &request(&[1]), &tmp.path().join("w"), Duration::from_secs(30)).unwrap_err();
    match err {
        AdapterError::AdapterFailure { role, code, stderr_tail } => {
            assert_eq!(role, AdapterRole::Embedder);
            assert_eq!(code, Some(2));
            assert!(stderr_tail.contains("model weights not found"), "{stderr_tail}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn omitted_id_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let fix = fixtures(tmp.path(), &[1, 3], |s| s);
    let endpoint = copying_script(tmp.path(), &fix);
    let err = invoke_adapter(&endpoint, &request(&[1, 2, 3]), &tmp.path().join("w"), Duration::from_secs(30))
        .unwrap_err();
    assert!(
        matches!(
            err,
            AdapterError::OutputValidation {
                source: OutputValidationError::MissingId { instance_id: 2, .. },
                ..
            }
        ),
        "{err:?}"
    );
}

#[test]
fn mislabeled_scale_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let fix = fixtures(tmp.path(), &[1], |s| if s == 384 { 999 } else { s });
    let endpoint = copying_script(tmp.path(), &fix);
    let err = invoke_adapter(&endpoint, &request(&[1]), &tmp.path().join("w"), Duration::from_secs(30)).unwrap_err();
    assert!(
        matches!(
            err,
            AdapterError::OutputValidation {
                source: OutputValidationError::WrongScale {
                    expected: 384,
                    found: 999
                },
                ..
            }
        ),
        "{err:?}"
    );
}

#[test]
fn missing_and_malformed_files() {
    let tmp = tempfile::tempdir().unwrap();
    let silent = script(tmp.path(), "silent.sh", "exit 0");
    let err = invoke_adapter(&silent, &request(&[1]), &tmp.path().join("w"), Duration::from_secs(30)).unwrap_err();
    assert!(
        matches!(
            err,
            AdapterError::OutputValidation {
                source: OutputValidationError::MissingOutput { scale: 128 },
                ..
            }
        ),
        "{err:?}"
    );

    let garbage = script(
        tmp.path(),
        "garbage.sh",
        r#"awk '/"path":/ { sub(/.*"path": *"/, ""); sub(/".*/, ""); print }' "$2" |
while read -r p; do printf 'not a feature file' > "$p"; done"#,
    );
    let err = invoke_adapter(&garbage, &request(&[1]), &tmp.path().join("w"), Duration::from_secs(30)).unwrap_err();
    assert!(
        matches!(
            err,
            AdapterError::OutputValidation {
                source: OutputValidationError::Malformed { scale: 128, .. },
                ..
            }
        ),
        "{err:?}"
    );
}

#[test]
fn slow_adapter_times_out() {
    let tmp = tempfile::tempdir().unwrap();
    let endpoint = script(tmp.path(), "slow.sh", "sleep 10");
    let started = std::time::Instant::now();
    let err = invoke_adapter(&endpoint, &request(&[1]), &tmp.path().join("w"), Duration::from_millis(200))
        .unwrap_err();
    assert!(matches!(err, AdapterError::Timeout { .. }), "{err:?}");
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[test]
fn missing_program_is_a_spawn_error() {
    let tmp = tempfile::tempdir().unwrap();
    let endpoint = AdapterEndpoint::parse("/nonexistent/ptl-adapter embed").unwrap();
    let err = invoke_adapter(&endpoint, &request(&[1]), tmp.path(), Duration::from_secs(5)).unwrap_err();
    assert!(matches!(err, AdapterError::Spawn { .. }), "{err:?}");
}
