fn main() {
    modcsp::cli::main()
}
