use std::process::exit;

fn main() {
    exit(monoattn::cli::run());
}
