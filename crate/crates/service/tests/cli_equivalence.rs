//! Running `extract` then `edit` through the CLI gives the same bytes as a
//! service session fed the same inputs.

use std::fs;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use chromaprop::imgio::{encode_png, load_palette, palette_to_json, SolutionDocument};
use chromaprop::{ImageRgb, Stroke, StrokeSet};
use chromaprop_service::{router, AppState, CreateResponse, EditResponse, ServiceConfig};
use http_body_util::BodyExt;
use tower::ServiceExt;

#[tokio::test]
async fn cli_matches_service() {
    let img = ImageRgb::from_fn(72, 56, |x, y| {
        let r = if (x / 18 + y / 14) % 2 == 0 { 0.8 } else { 0.25 };
        [r, 0.3 + 0.4 * x as f64 / 71.0, 0.6 - 0.3 * y as f64 / 55.0]
    });
    let png = encode_png(&img);
    let strokes = StrokeSet {
        image_width: 72,
        image_height: 56,
        strokes: vec![
            Stroke {
                pixels: (5..15).map(|x| [x, 6]).collect(),
                target: [0.2, 0.9, 0.4],
            },
            Stroke {
                pixels: vec![[60, 50], [61, 50]],
                target: [0.9, 0.1, 0.1],
            },
        ],
    };

    let dir = tempfile::tempdir().unwrap();
    let (image_path, palette_path) = (dir.path().join("in.png"), dir.path().join("palette.json"));
    let (strokes_path, out_path) = (dir.path().join("strokes.json"), dir.path().join("out.png"));
    fs::write(&image_path, &png).unwrap();
    fs::write(&strokes_path, strokes.to_json()).unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["chromaprop"];
        full.extend_from_slice(args);
        let mut err = Vec::new();
        let code = chromaprop_cli::run(full, &mut Vec::new(), &mut err);
        assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
    };
    let s = |p: &std::path::Path| p.to_str().unwrap().to_string();
    run(&["extract", &s(&image_path), "-o", &s(&palette_path), "--superpixels", "120"]);
    run(&[
        "edit",
        &s(&image_path),
        "--palette",
        &s(&palette_path),
        "--strokes",
        &s(&strokes_path),
        "-o",
        &s(&out_path),
        "--samples",
        "100",
    ]);

    let app = router(AppState::new(ServiceConfig::default())).unwrap();
    let call = |req: Request<Body>| {
        let app = app.clone();
        async move {
            let resp = app.oneshot(req).await.unwrap();
            assert_eq!(resp.status(), StatusCode::OK);
            resp.into_body().collect().await.unwrap().to_bytes()
        }
    };
    let created: CreateResponse = serde_json::from_slice(
        &call(
            Request::post("/sessions?superpixels=120&samples=100")
                .header(header::CONTENT_TYPE, "image/png")
                .body(Body::from(png))
                .unwrap(),
        )
        .await,
    )
    .unwrap();
    let cli_palette = load_palette(&palette_path).unwrap();
    assert_eq!(
        serde_json::to_string_pretty(&created.palette).unwrap(),
        palette_to_json(&cli_palette)
    );

    let edit: EditResponse = serde_json::from_slice(
        &call(
            Request::post(format!("/sessions/{}/edit", created.session_id))
                .header(header::CONTENT_TYPE, "application/json")
                .body(Body::from(strokes.to_json()))
                .unwrap(),
        )
        .await,
    )
    .unwrap();
    assert_eq!(BASE64.decode(&edit.image).unwrap(), fs::read(&out_path).unwrap());
    let solution: SolutionDocument =
        serde_json::from_str(&fs::read_to_string(out_path.with_extension("json")).unwrap()).unwrap();
    assert_eq!(solution.deltas, edit.deltas);
    assert_eq!(solution.energy, edit.energy);
    assert_eq!(solution.entries, edit.palette.entries);
    assert!(edit.deltas.iter().flatten().any(|d| d.abs() > 1e-3));
}
