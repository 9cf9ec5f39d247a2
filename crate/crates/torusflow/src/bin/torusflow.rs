fn main() {
    std::process::exit(torusflow::driver::cli_main(std::env::args_os()));
}
