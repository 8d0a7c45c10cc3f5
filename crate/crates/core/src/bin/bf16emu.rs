fn main() {
    std::process::exit(bf16emu::harness::cli::run(std::env::args_os()));
}
