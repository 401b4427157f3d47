use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use toolforge::assembly::{execute_with, parse_program, ExecOptions};
use toolforge::geometry::{primitive, write_obj, PrimitiveKind, TriMesh};
use toolforge::provider::*;
use toolforge::toolspec::{GeomKind, PartSpec};

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/assets")
}

#[test]
fn library_entries_are_closed_meshes() {
    let lib = AssetLibrary::load(&assets()).unwrap();
    let keys: Vec<&str> = lib.entries().iter().map(|e| e.key.as_str()).collect();
    assert_eq!(keys, ["blade", "flat_board", "funnel", "hook", "scoop"]);
    for e in lib.entries() {
        let m = lib.generate(&e.key).unwrap();
        assert_eq!(m.open_edge_count(), 0, "{}", e.key);
    }
}

#[test]
fn selection_by_keyword_overlap() {
    let lib = AssetLibrary::load(&assets()).unwrap();
    assert_eq!(lib.select("a funnel to pour water").unwrap().key, "funnel");
    assert_eq!(lib.select("Sharp KNIFE, for cutting").unwrap().key, "blade");
    assert_eq!(lib.select("flat board to press dough").unwrap().key, "flat_board");
    assert!(matches!(lib.select("teapot"), Err(ProviderError::ProviderMiss(_))));
    assert!(matches!(lib.select("  "), Err(ProviderError::EmptyPrompt)));
}

#[test]
fn bad_manifests() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.txt"), "a missing.obj x\n").unwrap();
    assert!(matches!(AssetLibrary::load(dir.path()), Err(ProviderError::Manifest { line: 1, .. })));
    std::fs::write(dir.path().join("manifest.txt"), "# only a comment\nlonely\n").unwrap();
    assert!(matches!(AssetLibrary::load(dir.path()), Err(ProviderError::Manifest { line: 2, .. })));
    assert!(matches!(AssetLibrary::load(&dir.path().join("nope")), Err(ProviderError::Manifest { line: 0, .. })));
}

#[test]
fn generate3d_fits_part_extents() {
    let lib = AssetLibrary::load(&assets()).unwrap();
    let parts = [PartSpec {
        geom: GeomKind::Mesh,
        prompt: "wide flat paddle".into(),
        parameters: vec![0.3, 0.1, 0.02],
        is_graspable: true,
    }];
    let program = parse_program("p = GENERATE3D(part 0)\nEXPORT(p)").unwrap();
    let out = execute_with(&program, &parts, &lib, &ExecOptions::default()).unwrap();
    // Uniform scale from the x extent; the board's 0.2 x 0.15 x 0.01 proportions survive.
    let e = out[0].aabb().unwrap().extents();
    assert!((e.x - 0.3).abs() < 1e-9, "{e:?}");
    assert!((e.y / e.x - 0.75).abs() < 1e-9 && (e.z / e.x - 0.05).abs() < 1e-9, "{e:?}");
    let off = ExecOptions { allow_generate: false, ..Default::default() };
    assert!(execute_with(&program, &parts, &lib, &off).is_err());
}

#[test]
fn funnel_with_handle() {
    let lib = AssetLibrary::load(&assets()).unwrap();
    let parts = [
        PartSpec { geom: GeomKind::Mesh, prompt: "funnel".into(), parameters: vec![0.3, 0.3, 0.35], is_graspable: false },
        PartSpec { geom: GeomKind::Cube, prompt: String::new(), parameters: vec![0.1, 0.02, 0.02], is_graspable: true },
    ];
    let src = "f = GENERATE3D(part 0)\nh = PRIMITIVE(part 1)\nfb = GET_BBOX(f)\nhb = GET_BBOX(h)\n\
               h2 = MOVE(h, fb[0] - (hb[3] - hb[0]) / 2, 0, 0)\nt = CONCAT(f, h2)\nEXPORT(t)";
    let out = execute_with(&parse_program(src).unwrap(), &parts, &lib, &ExecOptions::default()).unwrap();
    assert_eq!(out.len(), 1);
    let e = out[0].aabb().unwrap().extents();
    assert!((e.x - 0.4).abs() < 1e-9, "{e:?}");
}

struct Counting(AtomicUsize);
impl MeshProvider for Counting {
    fn generate(&self, _prompt: &str) -> Result<TriMesh, ProviderError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Ok(primitive(PrimitiveKind::Cube, &[0.1, 0.1, 0.1]).unwrap())
    }
}

#[test]
fn cache_calls_inner_once_per_prompt() {
    let inner = Arc::new(Counting(AtomicUsize::new(0)));
    let cached = CachedProvider::new(inner.clone());
    for _ in 0..3 {
        cached.generate("box").unwrap();
    }
    cached.generate("crate").unwrap();
    assert_eq!(inner.0.load(Ordering::SeqCst), 2);
}

#[test]
fn registry_names() {
    let names: Vec<_> = provider_registry().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["library", "remote", "none"]);
    let cfg = ProviderConfig { kind: "printer".into(), ..Default::default() };
    assert!(matches!(build_provider(&cfg, Path::new(".")), Err(ProviderError::UnknownKind(_))));
    let cfg = ProviderConfig { kind: "library".into(), root: Some(assets()), ..Default::default() };
    assert!(build_provider(&cfg, Path::new("/")).unwrap().generate("hook").is_ok());
}

/// Minimal job server: answers each connection from `route(method, path)`.
fn job_server(route: impl Fn(&str, &str) -> (u16, String) + Send + 'static, requests: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for _ in 0..requests {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut first = String::new();
            reader.read_line(&mut first).unwrap();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let mut it = first.split_whitespace();
            let (method, path) = (it.next().unwrap(), it.next().unwrap());
            let (status, text) = route(method, path);
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                text.len()
            );
            reader.get_mut().write_all(reply.as_bytes()).unwrap();
        }
    });
    url
}

#[test]
fn remote_job_round_trip() {
    let obj = write_obj(&primitive(PrimitiveKind::Cube, &[0.2, 0.1, 0.05]).unwrap());
    let polls = AtomicUsize::new(0);
    let url = job_server(
        move |method, path| match (method, path) {
            ("POST", "/api/jobs") => (200, r#"{"id": "j7"}"#.into()),
            ("GET", "/api/jobs/j7") => {
                let n = polls.fetch_add(1, Ordering::SeqCst);
                (200, format!(r#"{{"status": "{}"}}"#, if n < 2 { "running" } else { "done" }))
            }
            ("GET", "/api/jobs/j7/mesh") => (200, obj.clone()),
            _ => (404, String::new()),
        },
        5,
    );
    let p = RemoteProvider::new(&format!("{url}/api/"), None, Duration::from_millis(1));
    let m = p.generate("a brick").unwrap();
    let e = m.aabb().unwrap().extents();
    assert!((e.x - 0.2).abs() < 1e-9 && (e.z - 0.05).abs() < 1e-9);
}

#[test]
fn remote_job_failure() {
    let url = job_server(
        |method, _| match method {
            "POST" => (200, r#"{"id": "bad"}"#.into()),
            _ => (200, r#"{"status": "failed"}"#.into()),
        },
        2,
    );
    let p = RemoteProvider::new(&url, None, Duration::from_millis(1));
    assert!(matches!(p.generate("x"), Err(ProviderError::RemoteError(m)) if m.contains("failed")));
    assert!(matches!(p.generate(""), Err(ProviderError::EmptyPrompt)));
}

const WORDS: [&str; 14] = [
    "cone", "pour", "hook", "pull", "board", "flat", "knife", "cut", "ladle", "cup", "red", "big", "the", "scoop",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Selection depends on the manifest contents, not on line order.
    #[test]
    fn selection_ignores_manifest_order(words in prop::collection::vec(0usize..WORDS.len(), 1..6), rot in 0usize..5) {
        let lib = AssetLibrary::load(&assets()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let text = std::fs::read_to_string(assets().join("manifest.txt")).unwrap();
        let mut lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        lines.rotate_left(rot);
        lines.reverse();
        std::fs::write(dir.path().join("manifest.txt"), lines.join("\n")).unwrap();
        for e in lib.entries() {
            std::fs::copy(&e.path, dir.path().join(e.path.file_name().unwrap())).unwrap();
        }
        let shuffled = AssetLibrary::load(dir.path()).unwrap();
        let prompt: Vec<&str> = words.iter().map(|&i| WORDS[i]).collect();
        let prompt = prompt.join(" ");
        let a = lib.select(&prompt).map(|e| e.key.clone());
        let b = shuffled.select(&prompt).map(|e| e.key.clone());
        prop_assert_eq!(a, b);
    }
}
