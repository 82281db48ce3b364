/**
 * Debounced, latest-wins render scheduling.
 *
 * At most one request leaves per debounce window; whatever state arrives
 * last inside the window is the one sent. Responses carry a monotonic
 * counter, and a response is displayed only if its counter is newer than
 * everything displayed so far, so stale renders can never overwrite fresh
 * ones regardless of network reordering.
 */

export interface RenderTransport<S, R> {
  send(state: S, counter: number): Promise<R>;
}

export class RenderScheduler<S, R> {
  private counter = 0;
  private displayedCounter = -1;
  private pendingState: S | null = null;
  private windowOpen = false;
  public sentCount = 0;

  constructor(
    private transport: RenderTransport<S, R>,
    private display: (result: R, counter: number) => void,
    private onError: (err: unknown) => void = () => undefined,
    private debounceMs = 50,
  ) {}

  /** Record the newest state; a send fires at the end of the current window. */
  update(state: S): void {
    this.pendingState = state;
    if (!this.windowOpen) {
      this.windowOpen = true;
      setTimeout(() => this.flush(), this.debounceMs);
    }
  }

  /** Send immediately (used for the initial render). */
  updateNow(state: S): void {
    this.pendingState = state;
    this.flush();
  }

  private flush(): void {
    this.windowOpen = false;
    if (this.pendingState === null) {
      return;
    }
    const state = this.pendingState;
    this.pendingState = null;
    const ticket = ++this.counter;
    this.sentCount += 1;
    this.transport
      .send(state, ticket)
      .then((result) => this.present(result, ticket))
      .catch((err) => this.onError(err));
  }

  private present(result: R, ticket: number): void {
    if (ticket > this.displayedCounter) {
      this.displayedCounter = ticket;
      this.display(result, ticket);
    }
  }

  get lastDisplayedCounter(): number {
    return this.displayedCounter;
  }

  get lastIssuedCounter(): number {
    return this.counter;
  }
}
