use std::path::Path;
use std::process::{Command, Output};

use featcache::dump::{write_dump, write_labels};
use featcache::Tensor;

fn featcache(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featcache"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn featcache")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_inputs(dir: &Path) {
    let feats: Vec<Tensor> = (0..9)
        .map(|i| {
            let data = (0..4 * 6 * 6)
                .map(|j| ((i * 7 + j) % 13) as f32 * 0.1 - 0.5)
                .collect();
            Tensor::new(vec![4, 6, 6], data).unwrap()
        })
        .collect();
    let flipped: Vec<Tensor> = feats.iter().map(|t| t.flip_h().unwrap()).collect();
    write_dump(&dir.join("f.bin"), &feats).unwrap();
    write_dump(&dir.join("fi.bin"), &flipped).unwrap();
    write_labels(
        &dir.join("l.txt"),
        &(0..9).map(|i| i % 3).collect::<Vec<_>>(),
    )
    .unwrap();
}

const BUILD: &[&str] = &[
    "build",
    "--input",
    "f.bin",
    "--labels",
    "l.txt",
    "--tau",
    "1e-3",
    "--chunk-size",
    "2",
    "--seed",
    "5",
];

fn build(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = BUILD.to_vec();
    args.extend_from_slice(&["--out", out]);
    args.extend_from_slice(extra);
    featcache(&args, dir)
}

#[test]
fn build_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let o = build(dir.path(), "c.afc", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let before = std::fs::read(dir.path().join("c.afc")).unwrap();
    let o = featcache(&["inspect", "c.afc", "--index", "--decode"], dir.path());
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for line in ["n: 9", "k: 2", "tau: 0.001", "chunks: 5", "checksums: ok"] {
        assert!(
            text.lines().any(|l| l == line),
            "missing {line:?} in\n{text}"
        );
    }
    assert_eq!(std::fs::read(dir.path().join("c.afc")).unwrap(), before);
}

#[test]
fn build_is_reproducible_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let aug = ["--gamma", "0.5", "--flipped", "fi.bin"];
    assert_eq!(code(&build(dir.path(), "a.afc", &aug)), 0);
    assert_eq!(code(&build(dir.path(), "b.afc", &aug)), 0);
    let mut with_workers = aug.to_vec();
    with_workers.extend_from_slice(&["--workers", "4"]);
    assert_eq!(code(&build(dir.path(), "c.afc", &with_workers)), 0);
    let a = std::fs::read(dir.path().join("a.afc")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.afc")).unwrap());
    assert_eq!(a, std::fs::read(dir.path().join("c.afc")).unwrap());
    let text = stdout(&featcache(&["inspect", "a.afc"], dir.path()));
    assert!(text.contains("augmentation: channel, gamma 0.5"), "{text}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());

    assert_eq!(code(&featcache(&["inspect", "missing.afc"], dir.path())), 2);
    let mut args = BUILD.to_vec();
    args[2] = "nope.bin";
    args.extend_from_slice(&["--out", "x.afc"]);
    assert_eq!(code(&featcache(&args, dir.path())), 2);

    for bad in [
        vec![
            "build", "--input", "f.bin", "--labels", "l.txt", "--out", "x.afc", "--tau=-1",
        ],
        vec![
            "build",
            "--input",
            "f.bin",
            "--labels",
            "l.txt",
            "--out",
            "x.afc",
            "--gamma",
            "1.5",
            "--flipped",
            "fi.bin",
        ],
        vec![
            "build", "--input", "f.bin", "--labels", "l.txt", "--out", "x.afc", "--gamma", "0.5",
        ],
        vec!["profile", "--chunks", "1,0"],
        vec!["inspect", "x.afc", "--frobnicate"],
        vec!["nonsense"],
    ] {
        let o = featcache(&bad, dir.path());
        assert_eq!(code(&o), 64, "{bad:?}");
    }
    assert!(
        !dir.path().join("x.afc").exists(),
        "flags must be rejected before any output"
    );
    assert_eq!(code(&featcache(&["--help"], dir.path())), 0);

    assert_eq!(code(&build(dir.path(), "c.afc", &[])), 0);
    let path = dir.path().join("c.afc");
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 20] ^= 0x55;
    std::fs::write(&path, &bytes).unwrap();
    let o = featcache(&["inspect", "c.afc"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("chunk 4"));

    std::fs::write(dir.path().join("junk.afc"), b"definitely not a cache file, but long enough to hold a header..........................................................").unwrap();
    assert_eq!(code(&featcache(&["inspect", "junk.afc"], dir.path())), 3);

    std::fs::write(dir.path().join("short.txt"), "0\n1\n").unwrap();
    let mut args = BUILD.to_vec();
    args[4] = "short.txt";
    args.extend_from_slice(&["--out", "y.afc"]);
    let o = featcache(&args, dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("build:"));
}

#[test]
fn profile_emits_one_row_per_chunk_size() {
    let dir = tempfile::tempdir().unwrap();
    let o = featcache(
        &[
            "profile",
            "--chunks",
            "1,2,4,8,16",
            "--count",
            "32",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "chunk_size,ratio,encode_s,decode_s_per_sample");
    assert_eq!(lines.len(), 6);
    let ks: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ks, ["1", "2", "4", "8", "16"]);

    // Ratio columns are reproducible; timing columns are not compared.
    let again = stdout(&featcache(
        &[
            "profile",
            "--chunks",
            "1,2,4,8,16",
            "--count",
            "32",
            "--seed",
            "3",
        ],
        dir.path(),
    ));
    let ratios = |t: &str| {
        t.lines()
            .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    assert_eq!(ratios(&text), ratios(&again));
}

#[test]
fn e2e_report() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["e2e", "--tau", "1e-2", "--gamma", "0.25", "--seed", "7"];
    let o = featcache(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let field = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    for acc in [
        "raw_acc",
        "compressed_acc",
        "naive_flip_acc",
        "aug_flip_acc",
    ] {
        let v: f64 = field(acc).parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert_eq!(field("aug_ge_naive"), "true");
    assert_eq!(stdout(&featcache(&args, dir.path())), text);
}

#[test]
fn cost_report_totals() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("stages.csv"),
        "stage,flops_per_sample,samples,epochs,memory_mb\n0,1660000000,50000,30,630\n5,1080000000,50000,30,278\n10,530000000,50000,100,99\n",
    )
    .unwrap();
    let o = featcache(
        &["cost-report", "stages.csv", "--out", "report.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(
        report.lines().next().unwrap(),
        "stage,flops_total,avg_mem,min_mem"
    );
    assert_eq!(
        report.lines().last().unwrap(),
        "total,6760000000000000,232.125,99.000"
    );
    assert_eq!(
        code(&featcache(&["cost-report", "absent.csv"], dir.path())),
        2
    );
}
