fn main() {
    let code = oampnet::cli::cli_main(std::env::args_os());
    std::process::exit(code);
}
