use std::ffi::{CStr, CString};
use std::ptr;

use peaknetfp::eval::{synth_corpus, CorpusConfig};
use peaknetfp_ffi::*;

fn corpus() -> Vec<(String, Vec<f32>)> {
    let cfg = CorpusConfig {
        n_tracks: 3,
        duration_secs: 12.0,
        ..CorpusConfig::default()
    };
    synth_corpus(&cfg)
        .into_iter()
        .map(|(id, c)| (id, c.samples))
        .collect()
}

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(pnfp_last_error())
            .to_string_lossy()
            .into_owned()
    }
}

#[test]
fn fingerprint_index_and_query() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(pnfp_model_new_default(3, &mut model), PnfpStatus::Ok);
        let dim = pnfp_model_dim(model);
        assert_eq!(dim, 128);
        assert_eq!(pnfp_model_sample_rate(model), 8000);

        let tracks = corpus();
        let (_, audio) = &tracks[0];
        let mut count = 0usize;
        let st = pnfp_fingerprint(
            model,
            audio.as_ptr(),
            audio.len(),
            8000,
            ptr::null_mut(),
            0,
            &mut count,
        );
        assert_eq!(st, PnfpStatus::Ok);
        assert_eq!(count, 23);
        let mut small = vec![0f32; dim];
        let st = pnfp_fingerprint(
            model,
            audio.as_ptr(),
            audio.len(),
            8000,
            small.as_mut_ptr(),
            1,
            &mut count,
        );
        assert_eq!(st, PnfpStatus::BufferTooSmall);
        let mut buf = vec![0f32; count * dim];
        let st = pnfp_fingerprint(
            model,
            audio.as_ptr(),
            audio.len(),
            8000,
            buf.as_mut_ptr(),
            count,
            &mut count,
        );
        assert_eq!(st, PnfpStatus::Ok);
        let norm: f32 = buf[..dim].iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);

        let db = pnfp_db_new();
        for (id, samples) in &tracks {
            let cid = CString::new(id.as_str()).unwrap();
            let st = pnfp_db_add_track(
                db,
                model,
                cid.as_ptr(),
                samples.as_ptr(),
                samples.len(),
                8000,
            );
            assert_eq!(st, PnfpStatus::Ok, "{}", last_error());
        }
        assert_eq!(pnfp_db_track_count(db), 3);

        // 6 s excerpt of the second track, aligned with segment 4
        let q = &tracks[1].1[16000..16000 + 48000];
        let mut matches = [PnfpMatch::default(); 4];
        let mut n = 0usize;
        let st = pnfp_query(
            model,
            db,
            q.as_ptr(),
            q.len(),
            8000,
            false,
            matches.as_mut_ptr(),
            4,
            &mut n,
        );
        assert_eq!(st, PnfpStatus::Ok, "{}", last_error());
        assert!(n >= 1);
        let id = CStr::from_ptr(pnfp_db_track_id(db, matches[0].track))
            .to_str()
            .unwrap();
        assert_eq!(id, tracks[1].0);
        assert_eq!(matches[0].offset, 4);

        // frozen after the first search
        let cid = CString::new("late").unwrap();
        let st = pnfp_db_add_track(db, model, cid.as_ptr(), q.as_ptr(), q.len(), 8000);
        assert_eq!(st, PnfpStatus::Config);
        assert!(pnfp_db_track_id(db, 99).is_null());

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("db.bin").to_str().unwrap()).unwrap();
        assert_eq!(pnfp_db_build_ivfpq(db), PnfpStatus::Ok);
        assert_eq!(pnfp_db_save(db, path.as_ptr()), PnfpStatus::Ok);
        let mut reopened = ptr::null_mut();
        assert_eq!(pnfp_db_open(path.as_ptr(), &mut reopened), PnfpStatus::Ok);
        assert_eq!(pnfp_db_track_count(reopened), 3);
        let st = pnfp_query(
            model,
            reopened,
            q.as_ptr(),
            q.len(),
            8000,
            true,
            matches.as_mut_ptr(),
            4,
            &mut n,
        );
        assert_eq!(st, PnfpStatus::Ok);
        let id = CStr::from_ptr(pnfp_db_track_id(reopened, matches[0].track))
            .to_str()
            .unwrap();
        assert_eq!(id, tracks[1].0);

        pnfp_db_free(reopened);
        pnfp_db_free(db);
        pnfp_model_free(model);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(
            pnfp_model_load(ptr::null(), ptr::null(), &mut model),
            PnfpStatus::NullArgument
        );
        assert!(last_error().contains("checkpoint"));

        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(
            pnfp_model_load(missing.as_ptr(), ptr::null(), &mut model),
            PnfpStatus::Data
        );
        assert!(last_error().contains("/nonexistent/model.ckpt"));

        let mut db = ptr::null_mut();
        assert_eq!(pnfp_db_open(missing.as_ptr(), &mut db), PnfpStatus::Data);

        assert_eq!(pnfp_model_new_default(0, &mut model), PnfpStatus::Ok);
        let short = vec![0.1f32; 100];
        let mut count = 0usize;
        let st = pnfp_fingerprint(
            model,
            short.as_ptr(),
            short.len(),
            8000,
            ptr::null_mut(),
            0,
            &mut count,
        );
        assert_eq!(st, PnfpStatus::Data);
        let st = pnfp_fingerprint(
            model,
            short.as_ptr(),
            short.len(),
            0,
            ptr::null_mut(),
            0,
            &mut count,
        );
        assert_eq!(st, PnfpStatus::Internal);

        let empty = pnfp_db_new();
        let mut out = [PnfpMatch::default(); 1];
        let audio = corpus().remove(0).1;
        let st = pnfp_query(
            model,
            empty,
            audio.as_ptr(),
            audio.len(),
            8000,
            false,
            out.as_mut_ptr(),
            1,
            &mut count,
        );
        assert_ne!(st, PnfpStatus::Ok);
        pnfp_db_free(empty);
        pnfp_model_free(model);
        pnfp_model_free(ptr::null_mut());
        pnfp_db_free(ptr::null_mut());
        assert_eq!(pnfp_model_dim(ptr::null()), 0);
    }
}

#[test]
fn header_declares_the_interface() {
    let header = include_str!("../include/peaknetfp.h");
    for name in [
        "pnfp_last_error",
        "pnfp_model_load",
        "pnfp_model_free",
        "pnfp_fingerprint",
        "pnfp_db_open",
        "pnfp_db_add_track",
        "pnfp_query",
        "typedef struct PnfpModel PnfpModel;",
        "PNFP_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    // compile it as C where a compiler is available
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        "#include \"peaknetfp.h\"\nint main(void) { return pnfp_model_dim(0); }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    if let Ok(out) = std::process::Command::new("cc")
        .args([
            "-std=c99",
            "-Wall",
            "-Werror",
            "-fsyntax-only",
            "-I",
            include,
        ])
        .arg(&src)
        .output()
    {
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
