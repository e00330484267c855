use std::fs;

use pickle_sentry::scan::{FileVerdict, ScanConfig, Scanner};

fn scanner() -> Scanner {
    Scanner::new(None, ScanConfig::default())
}

#[test]
fn empty_directory_yields_no_reports() {
    let dir = tempfile::tempdir().unwrap();
    assert!(scanner().scan_tree(dir.path()).is_empty());
}

#[test]
fn zero_byte_file_is_a_scan_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.pkl"), b"").unwrap();
    let r = scanner().scan_tree(dir.path());
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].file_verdict, FileVerdict::ScanError);
    assert_eq!(r[0].error.as_deref(), Some("empty file"));
}

#[test]
fn unreadable_entry_is_reported_and_the_rest_scanned() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.pkl"), b"N.").unwrap();
    fs::write(dir.path().join("c.pkl"), b"cos\nsystem\n(S'id'\ntR.").unwrap();
    std::os::unix::fs::symlink(dir.path().join("gone.pkl"), dir.path().join("b.pkl")).unwrap();
    let r = scanner().scan_tree(dir.path());
    let verdicts: Vec<_> = r.iter().map(|r| r.file_verdict).collect();
    assert_eq!(verdicts, [FileVerdict::Benign, FileVerdict::ScanError, FileVerdict::Malicious]);
    assert!(r[1].path.ends_with("b.pkl"), "{}", r[1].path);
}

#[test]
fn symlinked_files_and_nested_directories_are_scanned_in_path_order() {
    let dir = tempfile::tempdir().unwrap();
    let blobs = dir.path().join("blobs");
    let snap = dir.path().join("snapshots/main");
    fs::create_dir_all(&blobs).unwrap();
    fs::create_dir_all(&snap).unwrap();
    fs::write(blobs.join("0123"), b"cos\nsystem\n(S'id'\ntR.").unwrap();
    std::os::unix::fs::symlink(blobs.join("0123"), snap.join("model.pkl")).unwrap();
    let r = scanner().scan_tree(&dir.path().join("snapshots"));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].file_verdict, FileVerdict::Malicious);

    let all: Vec<String> = scanner().scan_tree(dir.path()).into_iter().map(|r| r.path).collect();
    let mut sorted = all.clone();
    sorted.sort();
    assert_eq!(all.len(), 2);
    assert_eq!(all, sorted);
}

#[test]
fn a_file_root_scans_itself() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.pkl");
    fs::write(&f, b"N.").unwrap();
    let r = scanner().scan_tree(&f);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].file_verdict, FileVerdict::Benign);
}
