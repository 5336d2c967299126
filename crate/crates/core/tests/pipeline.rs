use chromaprop::config::PipelineConfig;
use chromaprop::editor::EditOptions;
use chromaprop::imgio::{load_image, load_palette, save_image, save_palette};
use chromaprop::pipeline::{prepare_field, Prepared};
use chromaprop::{FeatureField, ImageRgb, Stroke, StrokeSet};

fn two_region() -> (ImageRgb, FeatureField) {
    let img = ImageRgb::from_fn(64, 48, |x, _| if x < 32 { [0.8, 0.2, 0.2] } else { [0.1, 0.3, 0.9] });
    let field = FeatureField::from_fn(64, 48, |x, _| if x < 32 { [0.0, 0.2, 0.4] } else { [1.0, 0.6, 0.1] });
    (img, field)
}

#[test]
fn two_region_weights_separate() {
    let (img, field) = two_region();
    let prep = Prepared::extract(img, field, &PipelineConfig::default()).unwrap();
    assert_eq!(prep.model.k(), 2);
    let left = prep.palette().entries.iter().position(|e| e.color[0] > 0.5).unwrap();
    for y in 0..48 {
        for x in 0..64 {
            let w = prep.weights.at(x, y)[left];
            if x < 32 {
                assert!(w > 0.9, "({x}, {y}) weight {w}");
            } else {
                assert!(w < 0.1, "({x}, {y}) weight {w}");
            }
        }
    }
}

#[test]
fn saved_palette_reproduces_edit() {
    let dir = tempfile::tempdir().unwrap();
    let (img, field) = two_region();
    let img_path = dir.path().join("in.png");
    save_image(&img, &img_path).unwrap();
    let img = load_image(&img_path).unwrap();

    let prep = Prepared::extract(img.clone(), field.clone(), &PipelineConfig::default()).unwrap();
    let pal_path = dir.path().join("palette.json");
    save_palette(prep.palette(), &pal_path).unwrap();
    let reloaded = Prepared::with_palette(img, field, load_palette(&pal_path).unwrap()).unwrap();

    let strokes = StrokeSet {
        image_width: 64,
        image_height: 48,
        strokes: vec![Stroke {
            pixels: (10..20).map(|y| [8, y]).collect(),
            target: [0.5, 0.6, 0.2],
        }],
    };
    let a = prep.edit(&strokes, &EditOptions::default()).unwrap();
    let b = reloaded.edit(&strokes, &EditOptions::default()).unwrap();
    assert_eq!(a.image.to_bytes8(), b.image.to_bytes8());
    assert_eq!(a.solution.deltas, b.solution.deltas);
    // the right half is unlike every stroke pixel and stays put
    assert_eq!(a.image.pixel(50, 20), [0.1, 0.3, 0.9].map(|c: f64| (255.0 * c + 0.5).floor() / 255.0));
}

#[test]
fn fallback_features_cover_the_image() {
    let (img, _) = two_region();
    let field = prepare_field(&img, None, 8.0).unwrap();
    assert_eq!((field.width(), field.height()), (64, 48));
    assert!(field.data().iter().all(|v| (0.0..=1.0).contains(v)));
}
