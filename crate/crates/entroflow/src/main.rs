fn main() {
    std::process::exit(entroflow::harness::cli_main());
}
