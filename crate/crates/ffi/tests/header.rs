use std::path::PathBuf;
use std::process::Command;

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/contraction_mpc.h")
}

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "cmpc_last_error",
        "cmpc_scenario_preset",
        "cmpc_certify",
        "cmpc_controller_step",
        "cmpc_controller_free",
        "CMPC_STATUS_OK",
        "CMPC_STATUS_PANIC",
        "typedef struct CmpcScenario CmpcScenario",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\n\
             int main(void) {{\n\
               CmpcScenario *s = 0;\n\
               CmpcStatus st = cmpc_scenario_preset(\"deadbeat\", 1, &s);\n\
               cmpc_scenario_free(s);\n\
               return st == CMPC_STATUS_OK ? 0 : 1;\n\
             }}\n",
            header().display()
        ),
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = match Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("skipping: no C compiler ({cc}): {e}");
            return;
        }
    };
    assert!(status.success());
}

fn tempfile_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cmpc-header-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
